//! Crate-wide error type.
//!
//! Errors are grouped into the classes the command-line front end maps to
//! exit codes: configuration, input data, dimension/shape, numeric failure,
//! and checkpoint format.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameters, incompatible grid, even kernels, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Input data could not be read or is inconsistent (unparseable file, gaps, misalignment).
    #[error("input error: {0}")]
    Input(String),

    /// Tensor shapes do not match an operation's contract.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numeric failure during optimization (non-finite loss or parameters).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A checkpoint is truncated, corrupt, or from an incompatible version.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// An API was called in a way its contract forbids (e.g. backward from a non-scalar).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
