use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{0}: no valid records")]
    EmptyFile(PathBuf),

    #[error("{path}:{line}: empty gold concept set")]
    EmptyGoldSet { path: PathBuf, line: usize },

    #[error("mention {mention_index}: gold concept `{cui}` is not in the dictionary")]
    UnknownConcept { mention_index: usize, cui: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("embedding row {row} has (near) zero norm")]
    ZeroVector { row: usize },

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("pair list is empty")]
    EmptyPairList,

    #[error("mention set is empty")]
    EmptyMentionSet,

    #[error("unknown loss kind `{0}`")]
    UnknownLossKind(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config { .. } | Error::UnknownLossKind(_) => 1,
            Error::ShapeMismatch { .. }
            | Error::ZeroVector { .. }
            | Error::NonFiniteGradient { .. } => 3,
            Error::Training { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
