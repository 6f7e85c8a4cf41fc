use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("training diverged at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("estimation diverged at step {step}")]
    Divergence { step: usize },

    #[error("store error: {0}")]
    Store(String),

    #[error("corrupt artifact: {0}")]
    Corrupt(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Input(_) => "input",
            Error::Numeric(_) => "numeric",
            Error::Config(_) => "config",
            Error::Ingest(_) => "ingest",
            Error::Training { .. } => "training",
            Error::Divergence { .. } => "divergence",
            Error::Store(_) => "store",
            Error::Corrupt(_) => "corrupt",
            Error::Io(_) => "io",
        }
    }
}
