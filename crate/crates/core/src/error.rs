use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the summarization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty training text: {0}")]
    EmptyTraining(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing external feature for document {doc_id:?} sentence {index}")]
    MissingFeature { doc_id: String, index: usize },

    #[error("corpus is not labeled (document {0:?} has no labels); run the `label` command first")]
    Unlabeled(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Record { .. } => "record",
            Error::Config(_) => "config",
            Error::EmptyTraining(_) => "empty_training",
            Error::Invalid(_) => "invalid",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Checkpoint(_) => "checkpoint",
            Error::MissingFeature { .. } => "missing_feature",
            Error::Unlabeled(_) => "unlabeled",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
