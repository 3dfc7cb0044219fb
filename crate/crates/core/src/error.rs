use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Dataset file could not be parsed; carries the 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A structural invariant does not hold (CSR shape, task partition,
    /// class overlap, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Array or vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value is outside its allowed range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Performance-matrix bookkeeping misuse (upper-triangle write,
    /// overwrite, unpopulated read).
    #[error("metric error: {0}")]
    Metric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
