use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("no score for user `{user}` and item `{item}`")]
    MissingScore { user: String, item: String },

    #[error("index is empty")]
    EmptyIndex,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("requested {requested} items but only {available} are available")]
    TooMany { requested: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero variance: {0}")]
    ZeroVariance(&'static str),

    #[error("labels are all one class")]
    DegenerateLabels,

    #[error("inconsistent input: {0}")]
    Inconsistent(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
