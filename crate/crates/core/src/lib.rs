//! Gaussian-process transfer-learning models for Bayesian optimization.
//!
//! The crate is organized bottom-up:
//!
//! * single-task GP regression: [`kernel`], [`data`], [`gp`], [`likelihood`],
//!   [`optim`], [`hyperopt`];
//! * the transfer models over one or more source tasks: [`transfer`];
//! * the optimization loop and regret accounting: [`bo`];
//! * synthetic benchmark families: [`families`];
//! * independent sampling and timing checks of the closed forms: [`oracles`].

// `!(x >= 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bo;
pub mod data;
pub mod error;
pub mod families;
pub mod gp;
pub mod hyperopt;
pub mod kernel;
pub mod likelihood;
pub mod linalg;
pub mod optim;
pub mod oracles;
pub mod transfer;

pub use data::{normalize_targets, Normalization, TaskDataset};
pub use error::{Error, Result};
pub use gp::{ConditionedGP, GaussianPrediction, MarginalPrediction, PriorMean};
pub use hyperopt::optimize_hyperparameters;
pub use kernel::{kernel_eval, KernelHyperparams};
pub use likelihood::{log_marginal_likelihood, LmlValue};
pub use transfer::{ModelKind, TrainOptions, TransferModel};
