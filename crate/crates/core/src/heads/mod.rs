//! Uncertainty heads mapping features `z` to class probabilities and a
//! scalar epistemic uncertainty (larger means less certain).

mod duq;
mod flow;
mod gmm;
mod postnet;
mod sngp;
mod softmax;

use crate::error::Result;
use crate::tensor::Matrix;

pub use duq::RbfCentroidHead;
pub use flow::RadialFlow;
pub use gmm::{gmm_fit, ClassGmm, GaussianComponent, GmmHead, GmmScore, GmmTarget};
pub use postnet::RadialFlowDirichletHead;
pub use sngp::{laplace_precision, RffGpLaplaceHead, SngpPrediction};
pub use softmax::SoftmaxEntropyHead;

/// Per-sample class probabilities and uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub probs: Matrix,
    pub uncertainty: Vec<f64>,
}

impl HeadOutput {
    pub fn predictions(&self) -> Vec<usize> {
        self.probs.iter_rows().map(argmax).collect()
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.probs.iter_rows().map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    }
}

pub trait UncertaintyHead {
    fn predict(&self, z: &Matrix) -> Result<HeadOutput>;
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
