//! Datasets and distribution-shift generators.

mod idx;
mod shift;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx};
pub use shift::{corrupt, rotate_images, shift_augment, Corruption, ShiftKind, ShiftSchedule};
pub use synthetic::{make_blobs, make_two_moons};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

/// Labelled inputs, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape(format!("{} inputs but {} labels", inputs.rows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::arg(format!("label {bad} outside [0, {class_count})")));
        }
        if !inputs.is_finite() {
            return Err(Error::arg("inputs contain non-finite values"));
        }
        Ok(Dataset { inputs, labels, class_count, split: Split::Train })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            split: self.split,
        }
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Same labels, new inputs.
    pub(crate) fn with_inputs(&self, inputs: Matrix) -> Dataset {
        Dataset { inputs, labels: self.labels.clone(), class_count: self.class_count, split: self.split }
    }
}
