//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data failed validation (non-finite entries, bad dimensions, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A CSV cell or record could not be parsed. Row and column are 1-based
    /// and refer to the physical file layout, including any header row.
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    /// A configuration (prior, MCMC settings, CLI flags) is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// An internal invariant was violated (orthogonality drift, cache
    /// incoherence, nonpositive scale).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// A degenerate posterior or spectrum prevents the requested summary.
    #[error("degenerate result: {0}")]
    Degenerate(String),

    /// The importance-sampling oracle refuses to report (effective sample
    /// size below the reliability gate).
    #[error("unreliable oracle: {0}")]
    UnreliableOracle(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
