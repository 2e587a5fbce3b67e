use serde::{Deserialize, Serialize};

use super::flow::RadialFlow;
use super::{HeadOutput, UncertaintyHead};
use crate::error::{Error, Result};
use crate::nn::{check_labels, HeadLoss, ParamMut, TrainableHead};
use crate::regularize::{dirichlet_entropy, dirichlet_entropy_grad};
use crate::tensor::special::{digamma, trigamma};
use crate::tensor::{Matrix, Rng};

/// Largest exponent taken when turning log-evidence into counts.
const MAX_LOG_EVIDENCE: f64 = 700.0;
const MAX_LATENT_DIM: usize = 10;

/// Posterior-network head: one radial flow per class over a small latent
/// space, turned into Dirichlet parameters `αⱼ = β_prior + Nⱼ pⱼ(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialFlowDirichletHead {
    pub flows: Vec<RadialFlow>,
    /// Training-set class counts `Nⱼ`.
    pub class_counts: Vec<f64>,
    pub beta_prior: f64,
    /// Weight of the Dirichlet entropy bonus in the training loss.
    pub entropy_weight: f64,
}

impl RadialFlowDirichletHead {
    pub fn new(
        latent_dim: usize,
        depth: usize,
        class_counts: Vec<f64>,
        entropy_weight: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if latent_dim == 0 || latent_dim > MAX_LATENT_DIM {
            return Err(Error::arg(format!("latent dimension must be in 1..={MAX_LATENT_DIM}")));
        }
        if class_counts.is_empty() || class_counts.iter().any(|&n| !(n >= 0.0)) {
            return Err(Error::arg("class counts must be nonnegative, one per class"));
        }
        if !(entropy_weight >= 0.0) {
            return Err(Error::arg("entropy weight must be nonnegative"));
        }
        let flows = class_counts.iter().map(|_| RadialFlow::new(latent_dim, depth, rng)).collect::<Result<_>>()?;
        Ok(RadialFlowDirichletHead { flows, class_counts, beta_prior: 1.0, entropy_weight })
    }

    pub fn classes(&self) -> usize {
        self.flows.len()
    }

    /// `ln Nⱼ + ln pⱼ(z)` per class, before clamping.
    fn log_evidence(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.flows.iter().zip(&self.class_counts).map(|(f, &n)| Ok(n.ln() + f.log_prob(z)?)).collect()
    }

    fn alpha_from_log_evidence(&self, le: &[f64]) -> Vec<f64> {
        le.iter().map(|&v| self.beta_prior + v.min(MAX_LOG_EVIDENCE).exp()).collect()
    }

    /// Dirichlet parameters, shape `N × K`.
    pub fn alpha(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(z.rows(), self.classes());
        for i in 0..z.rows() {
            let a = self.alpha_from_log_evidence(&self.log_evidence(z.row(i))?);
            out.row_mut(i).copy_from_slice(&a);
        }
        Ok(out)
    }
}

impl UncertaintyHead for RadialFlowDirichletHead {
    /// Probabilities `α/α₀`; uncertainty `−maxⱼ(αⱼ − β_prior)`.
    fn predict(&self, z: &Matrix) -> Result<HeadOutput> {
        let mut probs = self.alpha(z)?;
        let mut uncertainty = Vec::with_capacity(z.rows());
        for i in 0..probs.rows() {
            let row = probs.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            uncertainty.push(-(max - self.beta_prior));
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|a| *a /= total);
        }
        Ok(HeadOutput { probs, uncertainty })
    }
}

impl TrainableHead for RadialFlowDirichletHead {
    /// Mean of the uncertainty-aware cross-entropy `ψ(α₀) − ψ(α_y)` minus the
    /// weighted Dirichlet entropy.
    fn loss_and_grad(&mut self, z: &Matrix, labels: &[usize]) -> Result<HeadLoss> {
        check_labels(z, labels)?;
        let k = self.classes();
        let norm = 1.0 / z.rows().max(1) as f64;
        let mut loss = 0.0;
        let mut input_grad = Matrix::zeros(z.rows(), z.cols());
        let mut param_grads: Vec<Vec<f64>> = self.flows.iter().map(|f| vec![0.0; f.params.len()]).collect();
        for (i, &y) in labels.iter().enumerate() {
            if y >= k {
                return Err(Error::arg(format!("label {y} outside {k} classes")));
            }
            let zi = z.row(i);
            let le = self.log_evidence(zi)?;
            let alpha = self.alpha_from_log_evidence(&le);
            let a0: f64 = alpha.iter().sum();
            let ent = if self.entropy_weight > 0.0 { dirichlet_entropy(&alpha)? } else { 0.0 };
            loss += digamma(a0) - digamma(alpha[y]) - self.entropy_weight * ent;
            let ent_grad = if self.entropy_weight > 0.0 { dirichlet_entropy_grad(&alpha)? } else { vec![0.0; k] };
            let t0 = trigamma(a0);
            for j in 0..k {
                if le[j] >= MAX_LOG_EVIDENCE || self.class_counts[j] == 0.0 {
                    continue;
                }
                let mut d_alpha = t0 - self.entropy_weight * ent_grad[j];
                if j == y {
                    d_alpha -= trigamma(alpha[y]);
                }
                // ∂αⱼ/∂ ln pⱼ = αⱼ − β_prior
                let w = norm * d_alpha * (alpha[j] - self.beta_prior);
                let (_, gz) = self.flows[j].log_prob_backward(zi, w, &mut param_grads[j])?;
                input_grad.row_mut(i).iter_mut().zip(gz).for_each(|(a, b)| *a += b);
            }
        }
        Ok(HeadLoss { loss: loss * norm, input_grad, param_grads })
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.flows.iter_mut().map(|f| ParamMut { values: &mut f.params, decay: false }).collect()
    }
}
