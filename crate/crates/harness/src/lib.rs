//! Experiment orchestration for the `dum` tool: configuration presets,
//! training and evaluation of method × strength × seed grids on shifted and
//! out-of-distribution data, and CSV/SVG reporting.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod lock;
pub mod methods;
pub mod report;

pub use config::{load_config, parse_config, preset, preset_names, DatasetSpec, ExperimentConfig, Method};
pub use error::{HarnessError, HarnessResult};
pub use experiment::{
    run_experiment, run_jobs, run_ood, sensitivity_sweep, write_run, JobOutcome, RunOptions, RunOutput, Stages,
    SweepSummary,
};
pub use lock::RunLock;
pub use report::{emit_report, read_report_csv, write_report_csv, ReportRow};
