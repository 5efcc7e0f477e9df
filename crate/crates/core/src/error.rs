use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: interval start {start} is after end {end}")]
    InvertedInterval { line: usize, start: i64, end: i64 },

    #[error("interval start {start} is after end {end}")]
    InvalidInterval { start: i64, end: i64 },

    #[error("dataset contains no facts")]
    EmptyDataset,

    #[error("inverse facts have already been added")]
    AlreadyAugmented,

    #[error("operation requires an inverse-augmented graph")]
    NotAugmented,

    #[error("interval endpoint is unknown")]
    UnknownEndpoint,

    #[error("quantization step must be positive, got {0}")]
    InvalidStep(i64),

    #[error("time range is inverted: {min} > {max}")]
    InvalidRange { min: i64, max: i64 },

    #[error("unknown predicate id {0}")]
    UnknownPredicate(u32),

    #[error("unknown predicate `{0}`")]
    UnknownPredicateName(String),

    #[error("event {0} is out of range")]
    UnknownEvent(usize),

    #[error("events at path positions {at} and {next} are not connected by an entity edge", next = at + 1)]
    NotAdjacent { at: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("mixture weights sum to {0}, expected 1")]
    WeightSum(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("controller history must be non-empty at step {0}")]
    EmptyHistory(usize),

    #[error("no trainable queries")]
    NoTrainableQueries,

    #[error("input is empty")]
    EmptyInput,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gap law is not gaussian")]
    NonGaussianLaw,

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("{path}: {source}")]
    FileIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::FileIo {
            path: path.into(),
            source,
        }
    }
}
