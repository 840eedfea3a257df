use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss for record {record_id}")]
    NonFiniteLoss { record_id: String },

    #[error("non-finite training loss at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("undefined optimum: {0}")]
    UndefinedOptimum(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate contribution: {0}")]
    DegenerateContribution(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error("config hash mismatch for {artifact}: expected {expected}, found {found}")]
    HashMismatch {
        artifact: String,
        expected: String,
        found: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
