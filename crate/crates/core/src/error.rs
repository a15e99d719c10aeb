use std::path::PathBuf;

use thiserror::Error;

/// A scenario value failed validation.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid configuration `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot parse scenario {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("comparison rejected: {0}")]
    Compare(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category used in CLI diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Parse { .. } => "configuration",
            Error::Io { .. } => "io",
            Error::Compare(_) => "comparison",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
