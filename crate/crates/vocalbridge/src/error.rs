//! Pipeline error type with stable exit codes.
//!
//! Exit codes: 2 usage/config, 3 missing file, 4 malformed data,
//! 5 non-finite numerics, 1 failed check or anything else.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("missing file {path}: {source}")]
    Missing {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config { .. } => 2,
            Self::Missing { .. } => 3,
            Self::Io { .. } => 3,
            Self::Format { .. } => 4,
            Self::Numeric(_) => 5,
            Self::Check(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Config { .. } => "config",
            Self::Missing { .. } => "missing",
            Self::Io { .. } => "io",
            Self::Format { .. } => "format",
            Self::Numeric(_) => "numeric",
            Self::Check(_) => "check",
        }
    }

    /// Classifies an io error on `path`: not-found maps to the missing-file
    /// code, everything else to generic io.
    pub fn from_io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::Missing { path, source }
        } else {
            Self::Io { path, source }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
