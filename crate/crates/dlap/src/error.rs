//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file's contents do not match the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// A well-formed file uses a variant this engine does not accept
    /// (e.g. a WAV at the wrong sample rate).
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// A named tensor is missing from a weight archive.
    #[error("tensor not found: {0}")]
    TensorNotFound(String),

    /// Operation invoked on an object in the wrong lifecycle state.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// The configuration cannot be used for the requested mode.
    #[error("unsupported configuration: {0}")]
    UnsupportedConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}
