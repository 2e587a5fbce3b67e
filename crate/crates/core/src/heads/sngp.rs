use serde::{Deserialize, Serialize};

use super::{HeadOutput, UncertaintyHead};
use crate::error::{Error, Result};
use crate::nn::{check_labels, HeadLoss, ParamMut, SoftmaxCrossEntropy, TrainableHead};
use crate::tensor::special::{log_sum_exp, sigmoid, softmax, softmax_into};
use crate::tensor::{cholesky_with_ridges, invert_lower, Matrix, Rng, ESCALATING_RIDGES};

/// Random-Fourier-feature GP output layer with a Laplace posterior over
/// the output weights.
///
/// `φ(z) = √(2/D) cos(Ωᵀz/ℓ + b)` with `Ω ~ N(0, I)`, `b ~ U(0, 2π)` frozen
/// at construction. Logits are `βᵀφ`. After training, [`fit_laplace`]
/// accumulates the precision `Λ = I + Σᵢ pᵢ(1−pᵢ) φᵢφᵢᵀ`; predictions then
/// shrink logits by the mean-field factor and report Dempster–Shafer
/// uncertainty.
///
/// [`fit_laplace`]: RffGpLaplaceHead::fit_laplace
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffGpLaplaceHead {
    /// `d × D`
    pub omega: Matrix,
    pub phase: Vec<f64>,
    pub lengthscale: f64,
    /// `D × K`
    pub beta: Matrix,
    /// `Λ`, `D × D`
    pub precision: Matrix,
    pub mean_field_factor: f64,
    /// Ridge that was needed to factor `Λ`.
    pub ridge: f64,
    /// `L⁻¹` for `Λ + ridge·I = L Lᵀ`; rebuilt by [`RffGpLaplaceHead::refactor`].
    #[serde(skip)]
    inverse_factor: Option<Matrix>,
}

/// Full SNGP prediction for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SngpPrediction {
    pub logits: Matrix,
    /// `φᵀ Λ⁻¹ φ`
    pub variance: Vec<f64>,
    pub adjusted_logits: Matrix,
    pub probs: Matrix,
    pub uncertainty: Vec<f64>,
}

/// `I + Σᵢ wᵢ φᵢφᵢᵀ`
pub fn laplace_precision(phi: &Matrix, weights: &[f64]) -> Result<Matrix> {
    if phi.rows() != weights.len() {
        return Err(Error::shape(format!("{} feature rows, {} weights", phi.rows(), weights.len())));
    }
    let mut scaled = phi.clone();
    for (i, &w) in weights.iter().enumerate() {
        if !(w >= 0.0) {
            return Err(Error::arg(format!("negative Fisher weight {w}")));
        }
        let s = w.sqrt();
        scaled.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    let mut lambda = scaled.t_matmul(&scaled)?;
    for j in 0..lambda.rows() {
        let v = lambda.get(j, j);
        lambda.set(j, j, v + 1.0);
    }
    Ok(lambda)
}

/// Dempster–Shafer uncertainty `K / (K + Σₖ exp mₖ)`.
fn dempster_shafer(logits: &[f64]) -> f64 {
    sigmoid((logits.len() as f64).ln() - log_sum_exp(logits))
}

impl RffGpLaplaceHead {
    pub fn new(
        feature_dim: usize,
        num_features: usize,
        classes: usize,
        lengthscale: f64,
        mean_field_factor: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if !(lengthscale > 0.0) || !(mean_field_factor >= 0.0) {
            return Err(Error::arg("lengthscale must be positive and mean-field factor nonnegative"));
        }
        if feature_dim == 0 || num_features == 0 || classes == 0 {
            return Err(Error::arg("GP head dimensions must be positive"));
        }
        let omega = rng.normal_matrix(feature_dim, num_features, 1.0);
        let phase = (0..num_features).map(|_| rng.uniform_range(0.0, 2.0 * std::f64::consts::PI)).collect();
        let beta = rng.normal_matrix(num_features, classes, (1.0 / num_features as f64).sqrt());
        let precision = Matrix::identity(num_features);
        Ok(RffGpLaplaceHead {
            omega,
            phase,
            lengthscale,
            beta,
            inverse_factor: Some(Matrix::identity(num_features)),
            precision,
            mean_field_factor,
            ridge: 0.0,
        })
    }

    pub fn num_features(&self) -> usize {
        self.phase.len()
    }

    pub fn classes(&self) -> usize {
        self.beta.cols()
    }

    fn pre_features(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.omega.rows() {
            return Err(Error::shape(format!("features have {} dims, head expects {}", z.cols(), self.omega.rows())));
        }
        let mut a = z.matmul(&self.omega)?;
        let inv = 1.0 / self.lengthscale;
        for i in 0..a.rows() {
            a.row_mut(i).iter_mut().zip(&self.phase).for_each(|(v, b)| *v = *v * inv + b);
        }
        Ok(a)
    }

    /// Random Fourier features `φ(z)`, shape `N × D`.
    pub fn features(&self, z: &Matrix) -> Result<Matrix> {
        let scale = (2.0 / self.num_features() as f64).sqrt();
        Ok(self.pre_features(z)?.map(|a| scale * a.cos()))
    }

    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        self.features(z)?.matmul(&self.beta)
    }

    /// Resets the posterior to the prior `Λ = I`.
    pub fn reset_laplace(&mut self) {
        let d = self.num_features();
        self.precision = Matrix::identity(d);
        self.inverse_factor = Some(Matrix::identity(d));
        self.ridge = 0.0;
    }

    /// Accumulates the Laplace precision over `z` (typically the whole
    /// training set) using the current output weights.
    pub fn fit_laplace(&mut self, z: &Matrix) -> Result<()> {
        let phi = self.features(z)?;
        let logits = phi.matmul(&self.beta)?;
        let weights: Vec<f64> = logits
            .iter_rows()
            .map(|r| {
                let p = softmax(r).into_iter().fold(0.0, f64::max);
                p * (1.0 - p)
            })
            .collect();
        self.precision = laplace_precision(&phi, &weights)?;
        self.refactor()
    }

    /// Refactors `Λ` (ridge escalation 1e-6 … 1e-2 on failure).
    pub fn refactor(&mut self) -> Result<()> {
        let (l, ridge) = cholesky_with_ridges(&self.precision, &ESCALATING_RIDGES)?;
        self.ridge = ridge;
        self.inverse_factor = Some(invert_lower(&l));
        Ok(())
    }

    fn variances(&self, phi: &Matrix) -> Result<Vec<f64>> {
        let owned;
        let linv = match &self.inverse_factor {
            Some(m) => m,
            None => {
                let (l, _) = cholesky_with_ridges(&self.precision, &ESCALATING_RIDGES)?;
                owned = invert_lower(&l);
                &owned
            }
        };
        // vᵢ = ‖L⁻¹φᵢ‖²
        let a = phi.matmul_t(linv)?;
        Ok(a.iter_rows().map(|r| r.iter().map(|v| v * v).sum()).collect())
    }

    pub fn predict_detail(&self, z: &Matrix) -> Result<SngpPrediction> {
        let phi = self.features(z)?;
        let logits = phi.matmul(&self.beta)?;
        let variance = self.variances(&phi)?;
        let mut adjusted = logits.clone();
        let mut probs = Matrix::zeros(logits.rows(), logits.cols());
        let mut uncertainty = Vec::with_capacity(logits.rows());
        for (i, &v) in variance.iter().enumerate() {
            let s = 1.0 / (1.0 + self.mean_field_factor * v).sqrt();
            adjusted.row_mut(i).iter_mut().for_each(|m| *m *= s);
            softmax_into(adjusted.row(i), probs.row_mut(i));
            uncertainty.push(dempster_shafer(adjusted.row(i)));
        }
        Ok(SngpPrediction { logits, variance, adjusted_logits: adjusted, probs, uncertainty })
    }
}

impl UncertaintyHead for RffGpLaplaceHead {
    fn predict(&self, z: &Matrix) -> Result<HeadOutput> {
        let p = self.predict_detail(z)?;
        Ok(HeadOutput { probs: p.probs, uncertainty: p.uncertainty })
    }
}

impl TrainableHead for RffGpLaplaceHead {
    /// Softmax cross-entropy on the raw GP logits.
    fn loss_and_grad(&mut self, z: &Matrix, labels: &[usize]) -> Result<HeadLoss> {
        check_labels(z, labels)?;
        let pre = self.pre_features(z)?;
        let scale = (2.0 / self.num_features() as f64).sqrt();
        let phi = pre.map(|a| scale * a.cos());
        let logits = phi.matmul(&self.beta)?;
        let ce = SoftmaxCrossEntropy.loss_and_grad(&logits, labels)?;
        let beta_grad = phi.t_matmul(&ce.input_grad)?;
        let mut g_pre = ce.input_grad.matmul_t(&self.beta)?;
        let inv = 1.0 / self.lengthscale;
        g_pre.data_mut().iter_mut().zip(pre.data()).for_each(|(g, a)| *g *= -scale * a.sin() * inv);
        let input_grad = g_pre.matmul_t(&self.omega)?;
        Ok(HeadLoss { loss: ce.loss, input_grad, param_grads: vec![beta_grad.into_data()] })
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        vec![ParamMut { values: self.beta.data_mut(), decay: true }]
    }
}
