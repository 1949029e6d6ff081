//! Crate-wide error type.

use thiserror::Error;

/// Crate-specific result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dataset format error at byte {offset}: {reason}")]
    DatasetFormat { offset: u64, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: Option<String>,
    },

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("unknown id {0}")]
    UnknownId(u64),

    #[error("id {0} belongs to the held-out final test set")]
    TestSetCollision(u64),

    #[error("training produced a non-finite loss at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("empty {0}")]
    EmptyInput(&'static str),

    #[error("unknown policy {name:?}; valid policies: {valid}")]
    UnknownPolicy { name: String, valid: String },

    #[error("annotation time is not available for segmentation masks")]
    MaskTimeUnavailable,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, got: usize, context: &str) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context: Some(context.to_string()),
        }
    }

    /// Process exit code for the CLI: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::UnknownPolicy { .. } | Error::Parse { .. } => 1,
            _ => 2,
        }
    }
}
