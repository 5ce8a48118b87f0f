use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    ManifestLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),

    #[error("sample {id:?}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("sample {id:?}: cannot decode {}: {message}", path.display())]
    Decode {
        id: String,
        path: PathBuf,
        message: String,
    },

    #[error("cannot encode {}: {message}", path.display())]
    Encode { path: PathBuf, message: String },

    #[error("no samples selected{}", .0.as_deref().map(|s| format!(" ({s})")).unwrap_or_default())]
    EmptySelection(Option<String>),

    #[error("channel mismatch: sample {id:?} has {found} channels, expected {expected} (enable force_rgb to mix)")]
    ChannelMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("component {index} has near-zero eigenvalue {value:e} (threshold {threshold:e})")]
    NearZeroEigenvalue {
        index: usize,
        value: f64,
        threshold: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("predictions {}: {message}", path.display())]
    Predictions { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// Whether the failure came from the filesystem rather than from the
    /// content of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Encode { .. })
    }
}
