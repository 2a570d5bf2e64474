use thiserror::Error;

/// Errors surfaced by the solver and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes of two inputs do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A scalar or enum argument is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Dataset content references states or actions that do not exist.
    #[error("invalid data: {0}")]
    Data(String),
    /// A dataset file line could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    /// An enumeration guard (e.g. `A^S` policies) would be exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    /// A gradient or linear solve produced a non-finite value.
    #[error("numerical failure at step {step}: {msg}")]
    Numerical { step: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
