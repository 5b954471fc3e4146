use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} is empty")]
    EmptyFile(PathBuf),
    #[error("row {row}: non-numeric cell {cell:?}")]
    MalformedRow { row: usize, cell: String },
    #[error("row {row}: expected at least 5 columns, found {found}")]
    TooFewColumns { row: usize, found: usize },
    #[error("row {row}: non-finite value")]
    NonFiniteValue { row: usize },
    #[error("unknown class label {0:?}")]
    UnknownLabel(String),
    #[error("recording {0}: every row failed quality control")]
    AllRowsRemoved(String),
    #[error("class {class} has {have} items, need at least {need}")]
    InsufficientClassData {
        class: String,
        have: usize,
        need: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} is shorter than one frame ({frame_len})")]
    SequenceTooShort { len: usize, frame_len: usize },
    #[error("degenerate mel filter bank: {0}")]
    DegenerateFilter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model has not been fitted")]
    NotFitted,
    #[error("label sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("architecture fingerprint mismatch (expected {expected}, found {found})")]
    FingerprintMismatch { expected: String, found: String },
    #[error("bad container: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFiniteLoss { .. } => ErrorKind::Numerical,
            Error::InvalidConfig(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}
