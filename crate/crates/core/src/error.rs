use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DsnError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel domain violation: {0}")]
    KernelDomain(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate simplex: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("malformed input in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DsnError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DsnError::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DsnError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in the numerics rather than in the
    /// caller's configuration or files.
    pub fn is_numerical(&self) -> bool {
        matches!(self, DsnError::Numerical(_) | DsnError::Degenerate(_))
    }
}

pub type Result<T> = std::result::Result<T, DsnError>;
