use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("Cholesky factorization failed after jitter escalation (last jitter tried: {jitter:e})")]
    Cholesky { jitter: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all {} optimizer restarts failed: [{}]", .0.len(), .0.join("; "))]
    OptimizationFailed(Vec<String>),

    #[error("every candidate in the discrete domain has already been observed")]
    DomainExhausted,

    #[error("degenerate value range: y_max == y_min == {0}")]
    DegenerateRange(f64),

    #[error("grid budget exceeded: {requested} evaluations requested, limit is {limit}")]
    BudgetExceeded { requested: u64, limit: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
