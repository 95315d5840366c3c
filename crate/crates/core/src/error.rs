use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance matrix sigma sigma^T is not positive definite")]
    NotPositiveDefinite,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: last change {last_change:e} after {refinements} refinements")]
    QuadratureNotConverged { last_change: f64, refinements: usize },

    #[error("bracket is non-positive at t = {t}: {value}")]
    NonPositiveBracket { t: f64, value: f64 },

    #[error("epsilon ladder is not monotone: Y_eps(0) rose from {previous} to {next} at eps = {eps:e}")]
    NonMonotoneLadder { eps: f64, previous: f64, next: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
