use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum CcgError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label not binary at line {line}")]
    LabelNotBinary { line: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl CcgError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CcgError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that come from the numerics rather than inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, CcgError::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, CcgError>;
