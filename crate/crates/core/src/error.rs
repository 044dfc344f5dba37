use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScudError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("not a generator: {0}")]
    InvalidGenerator(String),

    #[error("not a stochastic matrix: {0}")]
    InvalidKernel(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: usize },

    #[error("degenerate process: {0}")]
    Degenerate(String),

    #[error("state {x_t} unreachable from {x0} in {events} events")]
    Unreachable { x0: usize, x_t: usize, events: u64 },

    #[error("denoiser prediction incompatible with state {x_t} after {events} events")]
    IncompatiblePrediction { x_t: usize, events: u64 },

    #[error("non-finite loss at sample {sample}, dimension {dim}: {detail}")]
    NonFinite { sample: usize, dim: usize, detail: String },

    #[error("enumeration of {size} configurations exceeds the cap of {cap}")]
    EnumerationTooLarge { size: u128, cap: u128 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for ScudError {
    fn from(e: std::io::Error) -> Self {
        ScudError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ScudError>;
