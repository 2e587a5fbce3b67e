//! Evaluation metrics: OOD separation, calibration, lifted-curve ordering
//! quality and rank correlation.

mod calibration;
mod correlation;
mod lifted;
mod ranking;
mod records;

pub use calibration::{brier, ece, DEFAULT_ECE_BINS};
pub use correlation::{average_ranks, pearson, spearman};
pub use lifted::{aulc, lifted_curve, raulc, raulc_of_records, LiftedCurve};
pub use ranking::{aupr, auroc};
pub use records::{accuracy, read_records_csv, write_records_csv, EvalRecord};
