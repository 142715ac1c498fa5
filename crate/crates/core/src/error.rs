use thiserror::Error;

use crate::metrics::Trace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    /// A non-finite value appeared in the network state. `partial` holds the
    /// rows recorded before the failure when the error comes out of a full run.
    #[error("diverged at iteration {iter}: non-finite entry in {what}")]
    Diverged {
        iter: usize,
        what: &'static str,
        partial: Option<Box<Trace>>,
    },

    #[error("outside the admissible region: {0}")]
    Admissibility(String),

    #[error("degenerate constants: {0}")]
    DegenerateConstants(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
