//! Countermeasures against feature collapse: the two-sided gradient
//! penalty (with analytic double backpropagation through the MLP),
//! decoder-based reconstruction regularization, and the Dirichlet entropy
//! used by the flow-based head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ForwardTrace, GradientSet, MlpModel, Mode};
use crate::tensor::special::{digamma, ln_multivariate_beta, trigamma};
use crate::tensor::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    GradPenalty,
    Reconstruction,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    /// Loss weight λ.
    pub strength: f64,
    /// Decoder mapping features back to inputs; present iff `kind` is reconstruction.
    #[serde(default)]
    pub decoder: Option<MlpModel>,
    /// Target input-gradient norm of the gradient penalty.
    #[serde(default = "unit")]
    pub target_lipschitz: f64,
}

fn unit() -> f64 {
    1.0
}

impl RegularizerConfig {
    pub fn none() -> Self {
        RegularizerConfig { kind: RegularizerKind::None, strength: 0.0, decoder: None, target_lipschitz: 1.0 }
    }

    pub fn gradient_penalty(strength: f64) -> Self {
        RegularizerConfig { kind: RegularizerKind::GradPenalty, strength, ..Self::none() }
    }

    pub fn reconstruction(strength: f64, decoder: MlpModel) -> Self {
        RegularizerConfig {
            kind: RegularizerKind::Reconstruction,
            strength,
            decoder: Some(decoder),
            target_lipschitz: 1.0,
        }
    }

    pub fn entropy(strength: f64) -> Self {
        RegularizerConfig { kind: RegularizerKind::Entropy, strength, ..Self::none() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.strength.is_finite() || self.strength < 0.0 {
            return Err(Error::arg(format!("regularization strength {} must be finite and ≥ 0", self.strength)));
        }
        let is_recon = self.kind == RegularizerKind::Reconstruction;
        if is_recon != self.decoder.is_some() {
            return Err(Error::arg("a decoder is required for, and only for, reconstruction"));
        }
        if let Some(d) = &self.decoder {
            d.validate()?;
        }
        Ok(())
    }
}

/// A head reduced to a scalar `g(z)` per sample, with the second-order
/// information the gradient penalty needs.
pub trait ScalarHead {
    /// `g(zᵢ)` and `∇_z g(zᵢ)` for every row.
    fn scalar_and_grad(&self, z: &Matrix) -> Result<(Vec<f64>, Matrix)>;

    /// For every row, the Hessian-vector product `∇²_z g(zᵢ) · rᵢ`, and the
    /// batch-summed gradient of `Σᵢ rᵢ · ∇_z g(zᵢ)` with respect to the
    /// head's own parameters (in the head's parameter order).
    fn hessian_vector(&self, z: &Matrix, r: &Matrix) -> Result<(Matrix, Vec<Vec<f64>>)>;
}

/// `g(z) = Σⱼ zⱼ`; zero curvature, no parameters.
#[derive(Debug, Clone, Copy, Default)]
pub struct SumOutputs;

impl ScalarHead for SumOutputs {
    fn scalar_and_grad(&self, z: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let g = z.iter_rows().map(|r| r.iter().sum()).collect();
        Ok((g, Matrix::filled(z.rows(), z.cols(), 1.0)))
    }

    fn hessian_vector(&self, z: &Matrix, _r: &Matrix) -> Result<(Matrix, Vec<Vec<f64>>)> {
        Ok((Matrix::zeros(z.rows(), z.cols()), Vec::new()))
    }
}

/// Value and gradients of the gradient penalty.
#[derive(Debug, Clone)]
pub struct PenaltyGradient {
    pub penalty: f64,
    /// Per-sample `‖∇ₓ g(x)‖`.
    pub input_grad_norms: Vec<f64>,
    pub model: GradientSet,
    pub head: Vec<Vec<f64>>,
}

/// `λ · mean_i (‖∇ₓ g(xᵢ)‖ − t)²`, evaluated without dropout.
pub fn gradient_penalty(
    model: &MlpModel,
    head: &dyn ScalarHead,
    x: &Matrix,
    strength: f64,
    target: f64,
) -> Result<PenaltyGradient> {
    let trace = model.forward(x, Mode::Eval, &mut Rng::new(0))?;
    gradient_penalty_on_trace(model, head, &trace, strength, target)
}

/// Gradient penalty on an existing forward pass (dropout masks reused).
///
/// The input gradient is `δ₋₁ = D₀ ⊙ (… (D_{L-1} ⊙ ∇_z g) W_{L-1}ᵀ …) W₀ᵀ`
/// with `D_l` the activation derivative times the dropout mask, which is
/// locally constant for ReLU and linear units. Differentiating the penalty
/// then needs a reverse sweep through that recursion, one Hessian-vector
/// product of the head, and an ordinary backward pass.
pub fn gradient_penalty_on_trace(
    model: &MlpModel,
    head: &dyn ScalarHead,
    trace: &ForwardTrace,
    strength: f64,
    target: f64,
) -> Result<PenaltyGradient> {
    let z = trace.output();
    let (_, dz) = head.scalar_and_grad(z)?;
    let layers = &model.layers;
    let n_layers = layers.len();
    let batch = trace.input.rows();

    // input-gradient recursion, keeping γ_l = δ_l ⊙ D_l
    let mut gammas = vec![Matrix::zeros(0, 0); n_layers];
    let mut delta = dz.clone();
    for l in (0..n_layers).rev() {
        let gamma = mask_and_derivative(trace, model, l, &delta)?;
        let mut down = gamma.matmul_t(&layers[l].weight)?;
        down.scale_in_place(trace.scales[l]);
        gammas[l] = gamma;
        delta = down;
    }
    let input_grad = delta;

    let mut penalty = 0.0;
    let mut norms = Vec::with_capacity(batch);
    let mut adjoint = Matrix::zeros(batch, input_grad.cols());
    for i in 0..batch {
        let row = input_grad.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gap = norm - target;
        penalty += gap * gap;
        norms.push(norm);
        if norm > 0.0 {
            let coef = 2.0 * strength * gap / (norm * batch as f64);
            adjoint.row_mut(i).iter_mut().zip(row).for_each(|(a, &g)| *a = coef * g);
        }
    }
    penalty *= strength / batch.max(1) as f64;

    // reverse sweep through the recursion, input side first
    let mut eff_grads = Vec::with_capacity(n_layers);
    for (l, gamma) in gammas.iter().enumerate() {
        let g_eff = adjoint.t_matmul(gamma)?;
        let mut r_gamma = adjoint.matmul(&layers[l].weight)?;
        r_gamma.scale_in_place(trace.scales[l]);
        eff_grads.push(g_eff);
        adjoint = mask_and_derivative(trace, model, l, &r_gamma)?;
    }

    let (hz, head_grads) = head.hessian_vector(z, &adjoint)?;
    let mut grads = model.backward(trace, &hz, None)?;
    for (l, g_eff) in eff_grads.iter().enumerate() {
        let g = layers[l].weight_grad_from_effective(g_eff);
        grads.weights[l].add_scaled(1.0, &g)?;
    }
    Ok(PenaltyGradient { penalty, input_grad_norms: norms, model: grads, head: head_grads })
}

fn mask_and_derivative(trace: &ForwardTrace, model: &MlpModel, l: usize, upstream: &Matrix) -> Result<Matrix> {
    let mut out = upstream.clone();
    if let Some(mask) = &trace.masks[l] {
        out = out.hadamard(mask)?;
    }
    let relu = matches!(model.layers[l].activation, crate::nn::Activation::Relu);
    if relu {
        out.data_mut().iter_mut().zip(trace.pre_activations[l].data()).for_each(|(d, &p)| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
    }
    Ok(out)
}

/// Value and gradients of the reconstruction term.
#[derive(Debug, Clone)]
pub struct ReconstructionGradient {
    /// Unweighted mean squared error over all entries.
    pub mse: f64,
    /// `strength · mse`
    pub loss: f64,
    pub z_grad: Matrix,
    pub decoder: GradientSet,
}

/// Weighted mean squared error between `decoder(z)` and `x`.
pub fn reconstruction_loss(
    decoder: &MlpModel,
    z: &Matrix,
    x: &Matrix,
    strength: f64,
) -> Result<ReconstructionGradient> {
    if decoder.output_dim() != x.cols() || z.rows() != x.rows() {
        return Err(Error::shape(format!(
            "decoder outputs {} dims for {} rows, target is {}x{}",
            decoder.output_dim(),
            z.rows(),
            x.rows(),
            x.cols()
        )));
    }
    let trace = decoder.forward(z, Mode::Eval, &mut Rng::new(0))?;
    let diff = trace.output().sub(x)?;
    let count = (x.rows() * x.cols()).max(1) as f64;
    let mse = diff.data().iter().map(|d| d * d).sum::<f64>() / count;
    let grad_out = diff.scale(2.0 * strength / count);
    let decoder_grads = decoder.backward(&trace, &grad_out, None)?;
    let z_grad = decoder_grads.input.clone();
    Ok(ReconstructionGradient { mse, loss: strength * mse, z_grad, decoder: decoder_grads })
}

/// Differential entropy of `Dir(α)`:
/// `ln B(α) + (α₀ − K) ψ(α₀) − Σ (αⱼ − 1) ψ(αⱼ)`.
pub fn dirichlet_entropy(alpha: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    let k = alpha.len() as f64;
    let a0: f64 = alpha.iter().sum();
    let tail: f64 = alpha.iter().map(|&a| (a - 1.0) * digamma(a)).sum();
    Ok(ln_multivariate_beta(alpha) + (a0 - k) * digamma(a0) - tail)
}

/// `∂H/∂αⱼ = (α₀ − K) ψ'(α₀) − (αⱼ − 1) ψ'(αⱼ)`
pub fn dirichlet_entropy_grad(alpha: &[f64]) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let k = alpha.len() as f64;
    let a0: f64 = alpha.iter().sum();
    let common = (a0 - k) * trigamma(a0);
    Ok(alpha.iter().map(|&a| common - (a - 1.0) * trigamma(a)).collect())
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::Domain("Dirichlet needs at least one concentration".into()));
    }
    if let Some(bad) = alpha.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
        return Err(Error::Domain(format!("Dirichlet concentration {bad} must be positive")));
    }
    Ok(())
}
