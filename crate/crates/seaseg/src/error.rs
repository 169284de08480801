//! Error type shared across the toolkit, carrying the process exit code:
//! 2 for validation failures, 3 for runtime failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad arguments, configs, or file contents detected before work starts.
    #[error("{0}")]
    Validation(String),
    /// Failures during execution: I/O, non-finite losses, malformed data
    /// discovered mid-run.
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Validation(_) => 2,
            Error::Runtime(_) | Error::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Maps any displayable error to a validation error.
pub fn as_validation<E: std::fmt::Display>(e: E) -> Error {
    Error::Validation(e.to_string())
}

/// Maps any displayable error to a runtime error.
pub fn as_runtime<E: std::fmt::Display>(e: E) -> Error {
    Error::Runtime(e.to_string())
}
