use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator, harness or analysis code.
///
/// Variants are grouped by [`ErrorCategory`] so front ends can map them onto
/// stable exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config { .. } => ErrorCategory::Config,
            Error::Fit(_)
            | Error::Alignment(_)
            | Error::Degenerate(_)
            | Error::Data(_)
            | Error::Format(_)
            | Error::Io { .. } => ErrorCategory::Data,
            Error::Domain(_) | Error::Shape(_) | Error::Protocol(_) | Error::Numeric(_) => ErrorCategory::Runtime,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
