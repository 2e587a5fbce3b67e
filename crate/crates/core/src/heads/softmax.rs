use super::{HeadOutput, UncertaintyHead};
use crate::baselines::softmax_entropy;
use crate::error::Result;
use crate::tensor::special::softmax_into;
use crate::tensor::Matrix;

/// Softmax over logits, scored by predictive entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct SoftmaxEntropyHead;

impl UncertaintyHead for SoftmaxEntropyHead {
    fn predict(&self, logits: &Matrix) -> Result<HeadOutput> {
        let mut probs = Matrix::zeros(logits.rows(), logits.cols());
        let mut uncertainty = Vec::with_capacity(logits.rows());
        for i in 0..logits.rows() {
            softmax_into(logits.row(i), probs.row_mut(i));
            uncertainty.push(softmax_entropy(probs.row(i)));
        }
        Ok(HeadOutput { probs, uncertainty })
    }
}
