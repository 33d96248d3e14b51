use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("sample {id:?}: field {field:?} is empty")]
    EmptyField { id: String, field: String },

    #[error("corpus {0:?} contains no samples")]
    EmptyCorpus(String),

    #[error("sample {0:?}: code tokenizes to zero tokens")]
    EmptyCode(String),

    #[error("id {0:?} not found")]
    MissingId(String),

    #[error("sample {0:?}: instruction yields no character n-grams")]
    DegenerateInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample {id:?}: non-finite value at index {index}")]
    NonFiniteValue { id: String, index: usize },

    #[error("k = {k} exceeds the number of samples ({n})")]
    KTooLarge { k: usize, n: usize },

    #[error("sample {0:?}: non-finite embedding")]
    NonFiniteEmbedding(String),

    #[error("sample {0:?}: code has zero tokens")]
    ZeroLengthCode(String),

    #[error("sample {id:?}: expected {expected} log-probs, got {got}")]
    LengthMismatch { id: String, expected: usize, got: usize },

    #[error("sample {id:?}: positive log-prob at index {index}")]
    PositiveLogProb { id: String, index: usize },

    #[error("no IFD score for sample {0:?}")]
    ScoreMissing(String),

    #[error("sample {id:?}: length {len} exceeds context length {context_len}")]
    SampleExceedsContext { id: String, len: usize, context_len: usize },

    #[error("exhaustive bin packing supports at most {max} items, got {got}")]
    TooManyItems { max: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }

    /// True for problems with the input data or configuration, as opposed to
    /// I/O or serialization failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Io { .. } | Error::Json(_) => false,
            _ => true,
        }
    }
}
