use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by groundkit operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x}, {y}, {w}, {h}): width and height must be positive and finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("invalid image size {width}x{height}")]
    InvalidImageSize { width: f64, height: f64 },

    #[error("no boxes")]
    NoBoxes,

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance of view {view} is rank deficient; use reg > 0")]
    RankDeficient { view: char },

    #[error("training data must contain both classes ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },

    #[error("exhaustive search over {combinations} assignments exceeds budget {budget}; use solve_relaxed")]
    BudgetExceeded { combinations: f64, budget: u64 },

    #[error("no positive examples: {0}")]
    NoPositives(String),

    #[error("missing feature for {0}")]
    MissingFeature(String),

    #[error("dictionary {name}: expected {expected} entries, found {found}")]
    DictionaryCount {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
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
}
