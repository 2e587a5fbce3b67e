//! Deterministic single-forward-pass uncertainty methods for small MLPs:
//! spectral normalization and gradient-penalty regularizers, RBF-centroid,
//! random-feature GP, Gaussian-mixture and radial-flow Dirichlet heads, the
//! softmax / MC-dropout / ensemble baselines, and the evaluation metrics
//! (AUROC, AUPR, ECE, Brier, AULC, rAULC) used to compare them under
//! distribution shift.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod nn;
pub mod regularize;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Matrix, Rng};
