//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at byte offset {offset}: {source}")]
    IoAt {
        offset: u64,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncation { expected: u64, actual: u64 },

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error in {term}: {message}")]
    Numerical { term: String, message: String },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn numerical(term: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            term: term.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IoAt { .. } | Error::Io { .. } => 4,
            Error::Numerical { .. } | Error::Training { .. } => 3,
            Error::Format(_)
            | Error::Truncation { .. }
            | Error::Validation { .. }
            | Error::EmptyInput(_)
            | Error::Config(_)
            | Error::Capacity(_)
            | Error::InsufficientData(_) => 2,
        }
    }
}
