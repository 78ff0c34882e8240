//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv row {row}, column {column}: cannot parse {value:?} as a number")]
    CsvCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("label column {0:?} not found")]
    LabelColumnMissing(String),

    #[error("need >= 2 classes, found {0}")]
    TooFewClasses(usize),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("pooling geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("non-finite loss at epoch {epoch}; consider lowering the learning rate")]
    NonFiniteLoss { epoch: usize },

    #[error("empty node: cannot compute impurity of zero samples")]
    EmptyNode,

    #[error("feature set of size {0} exceeds the exact-enumeration bound {1}; use the sampled estimator")]
    FeatureSetTooLarge(usize, usize),

    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: String, reason: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
