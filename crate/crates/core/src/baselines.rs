//! Reference estimators: softmax entropy, MC dropout and deep ensembles,
//! with the mutual-information split of predictive entropy.

use crate::error::{Error, Result};
use crate::nn::{MlpModel, Mode};
use crate::tensor::special::softmax_into;
use crate::tensor::{Matrix, Rng};

pub const DEFAULT_MC_SAMPLES: usize = 10;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;

/// `T` class-probability matrices of shape `N × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSamples {
    pub samples: Vec<Matrix>,
}

/// Per-sample decomposition of predictive entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub epistemic: f64,
    pub aleatoric: f64,
    pub total: f64,
}

impl PredictiveSamples {
    pub fn new(samples: Vec<Matrix>) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::arg("no predictive samples"))?;
        if samples.iter().any(|s| s.shape() != first.shape()) {
            return Err(Error::shape("predictive samples differ in shape"));
        }
        Ok(PredictiveSamples { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `p̄ = (1/T) Σₜ pₜ`.
    pub fn mean(&self) -> Matrix {
        let mut m = self.samples[0].clone();
        for s in &self.samples[1..] {
            m.add_scaled(1.0, s).expect("shapes checked");
        }
        m.scale_in_place(1.0 / self.samples.len() as f64);
        m
    }

    /// Decomposition for every row.
    pub fn decompose(&self) -> Vec<Decomposition> {
        let (n, _) = self.samples[0].shape();
        (0..n).map(|i| row_decomposition(self.samples.iter().map(|s| s.row(i)))).collect()
    }
}

/// `H(p) = −Σ p ln p` with `0 ln 0 = 0`.
pub fn softmax_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

fn row_decomposition<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Decomposition {
    let mut mean: Vec<f64> = Vec::new();
    let mut aleatoric = 0.0;
    let mut t = 0usize;
    for r in rows {
        if mean.is_empty() {
            mean = vec![0.0; r.len()];
        }
        mean.iter_mut().zip(r).for_each(|(m, p)| *m += p);
        aleatoric += softmax_entropy(r);
        t += 1;
    }
    let t = t as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    aleatoric /= t;
    let total = softmax_entropy(&mean);
    Decomposition { epistemic: (total - aleatoric).max(0.0), aleatoric: aleatoric.min(total), total }
}

/// Epistemic (mutual information), aleatoric (expected entropy) and total
/// (entropy of the mean) uncertainty of a single input's samples.
pub fn mutual_information(samples: &[Vec<f64>]) -> Result<Decomposition> {
    let first = samples.first().ok_or_else(|| Error::arg("no predictive samples"))?;
    if samples.iter().any(|s| s.len() != first.len()) {
        return Err(Error::shape("samples differ in class count"));
    }
    Ok(row_decomposition(samples.iter().map(Vec::as_slice)))
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        softmax_into(logits.row(i), p.row_mut(i));
    }
    p
}

/// Class probabilities of a softmax classifier in eval mode.
pub fn softmax_predict(model: &MlpModel, x: &Matrix) -> Result<Matrix> {
    Ok(softmax_rows(&model.predict(x)?))
}

/// `T` stochastic forward passes with fresh dropout masks.
pub fn mc_dropout_predict(model: &MlpModel, x: &Matrix, samples: usize, rng: &mut Rng) -> Result<PredictiveSamples> {
    if samples == 0 {
        return Err(Error::arg("MC dropout needs at least one sample"));
    }
    let out = (0..samples)
        .map(|_| model.forward(x, Mode::McSample, rng).map(|t| softmax_rows(t.output())))
        .collect::<Result<Vec<_>>>()?;
    PredictiveSamples::new(out)
}

/// One eval-mode prediction per ensemble member.
pub fn ensemble_predict(models: &[MlpModel], x: &Matrix) -> Result<PredictiveSamples> {
    let first = models.first().ok_or_else(|| Error::arg("empty ensemble"))?;
    if models.iter().any(|m| m.input_dim() != first.input_dim() || m.output_dim() != first.output_dim()) {
        return Err(Error::shape("ensemble members differ in input or output dimension"));
    }
    PredictiveSamples::new(models.iter().map(|m| softmax_predict(m, x)).collect::<Result<_>>()?)
}

/// Image-level uncertainty as the mean of per-pixel uncertainties.
pub fn pixel_uncertainty_mean(per_pixel: &Matrix) -> Result<f64> {
    let n = per_pixel.data().len();
    if n == 0 {
        return Err(Error::arg("empty uncertainty field"));
    }
    Ok(per_pixel.sum() / n as f64)
}
