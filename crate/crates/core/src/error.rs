//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, fitting and solving routines.
#[derive(Debug, Error)]
pub enum BrlError {
    /// A domain object (MDP, distribution, family, dataset) failed validation.
    #[error("invalid {kind}: {msg}")]
    Invalid {
        /// What kind of object failed validation.
        kind: &'static str,
        /// Human-readable description of the violated invariant.
        msg: String,
    },

    /// Array shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A statistical assumption required by the operation is violated
    /// (e.g. infinite concentrability).
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    /// The family variant does not support the requested operation.
    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    /// An iterative solver failed (non-convergence, non-sub-root input, ...).
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// A scalar parameter is out of range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Underlying I/O failure (file formats, config files).
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed structured text (JSON) input.
    #[error("parse error: {0}")]
    Parse(String),
}

impl BrlError {
    pub(crate) fn invalid(kind: &'static str, msg: impl Into<String>) -> Self {
        BrlError::Invalid {
            kind,
            msg: msg.into(),
        }
    }
}

impl From<serde_json::Error> for BrlError {
    fn from(e: serde_json::Error) -> Self {
        BrlError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BrlError>;
