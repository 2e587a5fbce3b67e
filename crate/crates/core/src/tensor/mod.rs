//! Dense linear algebra, random streams and elementary special functions.

mod linalg;
mod matrix;
mod rng;
pub mod special;

pub use linalg::{
    cholesky, cholesky_log_det, cholesky_solve, cholesky_with_ridges, covariance, invert_lower, pca_fit, solve_lower,
    solve_lower_transposed, spectral_norm_converged, spectral_norm_power_iter, symmetric_eigen, PcaProjection,
    PowerIteration, SymmetricEigen, ESCALATING_RIDGES,
};
pub use matrix::{axpy, dot, matmul, norm2, Matrix};
pub use rng::Rng;
