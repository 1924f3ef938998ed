use thiserror::Error;

/// Errors raised by the pure numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("point is off the critical manifold: |grad F| = {residual_grad_norm:e} > {tolerance:e}")]
    OffManifold {
        residual_grad_norm: f64,
        tolerance: f64,
    },
    #[error("inconsistent reference minimum: F(w) = {value:e} < F* = {f_star:e}")]
    InconsistentMinimum { value: f64, f_star: f64 },
    #[error("oracle failed to converge after {iterations} iterations (gap {gap:e})")]
    OracleFailure { iterations: usize, gap: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
