//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Inputs describe an impossible setup (bad grid, empty dataset, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor/layer dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A sampling distribution with zero total mass.
    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    /// Parameter store misuse or corrupt payload.
    #[error("store error: {0}")]
    Store(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
