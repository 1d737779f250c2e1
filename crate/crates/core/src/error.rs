use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MvcError>;

#[derive(Debug, Error)]
pub enum MvcError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl MvcError {
    /// True for failures caused by the numbers (non-finite loss, bad SVD
    /// input) rather than by the caller's configuration or files.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MvcError::Numerical(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MvcError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        MvcError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
