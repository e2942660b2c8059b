//! Common error type for the whole pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("QP error: {0}")]
    Qp(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("degenerate target: denominator of BFR is zero")]
    DegenerateTarget,
    #[error("divergent trajectory: {0}")]
    Divergent(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand used at dimension-check sites.
pub(crate) fn dim_err(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::DimensionMismatch {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
