//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Array/measure dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// NaN or Inf encountered in checked mode.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative solver did not reach its tolerance.
    #[error("did not converge: {0}")]
    NoConvergence(String),

    /// A training run diverged (objective blew up or went NaN).
    #[error("diverged: {0}")]
    Diverged(String),

    /// Operation outside the supported envelope (size caps, modes).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
