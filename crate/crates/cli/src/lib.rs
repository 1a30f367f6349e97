//! Experiment orchestration for transfer-learning Bayesian optimization:
//! configuration, the run grid, trace and summary files, and the
//! verification and timing commands.

// `!(x >= 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use run::{run_experiment, RunOutcome, RunSummary};
