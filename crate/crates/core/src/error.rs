use thiserror::Error;

/// Errors raised by the active-learning engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not positive semi-definite: eigenvalue {min:e} < -1e-6 * {max:e}")]
    NotPsd { min: f64, max: f64 },
    #[error("degenerate spectrum: eigenvalues sum to zero")]
    DegenerateSpectrum,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("set of size {size} exceeds the cardinality cap {cap}")]
    CapExceeded { size: usize, cap: usize },
    #[error("element {0} is already in the set")]
    AlreadyInSet(usize),
    #[error("index {index} out of range for ground set of size {len}")]
    OutOfRange { index: usize, len: usize },
    #[error("unknown example id {0}")]
    UnknownId(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("id {0} is not part of the pending query")]
    NotPending(usize),
    #[error("labels must cover the whole pending query: expected {expected}, got {got}")]
    IncompleteBatch { expected: usize, got: usize },
    #[error("no query is pending")]
    NoPendingQuery,
    #[error("trial records are not paired: {0}")]
    Unpaired(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
