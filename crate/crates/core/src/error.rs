use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("determinism error: {0}")]
    Determinism(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("schema error: {}", .errors.join("; "))]
    Schema { errors: Vec<String> },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("non-finite loss at step {step}; last good checkpoint: {}", .checkpoint.display())]
    NonFiniteLoss { step: usize, checkpoint: PathBuf },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
