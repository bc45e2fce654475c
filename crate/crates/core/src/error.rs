use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("history too short: need {needed} lagged values, got {got}")]
    Arity { needed: usize, got: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("support truncation failed: window exceeded {max_states} states")]
    TruncationFailure { max_states: usize },

    /// Some row of a truncated transition matrix lost more mass than allowed.
    #[error("window too small: row mass deficiency {deficiency:e}")]
    WindowTooSmall { deficiency: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("hessian is not positive definite; standard errors unavailable")]
    HessianNotPositiveDefinite,

    #[error("optimizer did not converge after {iterations} iterations")]
    NonConvergence { best: Vec<f64>, loglik: f64, iterations: usize },
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn numerical(msg: impl Into<String>) -> Error {
    Error::Numerical(msg.into())
}
