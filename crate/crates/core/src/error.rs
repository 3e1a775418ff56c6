use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value was NaN or infinite where a finite number is required.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// The caller violated an operation's precondition (shapes, sizes, flags).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unreliable gradient check: {0}")]
    UnreliableCheck(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {stats}")]
    Diverged {
        epoch: usize,
        batch: usize,
        stats: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
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
