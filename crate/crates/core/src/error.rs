use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library. Record-level problems during ingestion are
/// not errors; they are collected into an [`crate::corpus::IngestReport`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("vocabulary is empty after filtering")]
    EmptyVocabulary,

    #[error("vocabulary hash mismatch: model {model}, corpus {corpus}")]
    VocabularyMismatch { model: String, corpus: String },

    #[error("malformed archive {path}: {reason}")]
    Archive { path: PathBuf, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn archive(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Archive {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad configuration rather than a failing stage.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
