use thiserror::Error;

/// Errors raised by model construction, solvers, metrics and learners.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid construction: {0}")]
    Construction(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at state {state}, action {action}")]
    NonFinite { state: usize, action: usize },

    #[error("no convergence within {cap} iterations")]
    IterationCap { cap: usize },

    #[error("singular evaluation system (pivot {pivot:e} at row {row})")]
    Singular { row: usize, pivot: f64 },

    #[error("invalid state weighting: {0}")]
    Weighting(String),

    #[error("index {index} beyond trace of length {len}")]
    TraceRange { index: usize, len: usize },

    #[error("action gap needs at least two actions, got {0}")]
    TooFewActions(usize),

    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    Missing(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
