use thiserror::Error;

/// Errors raised by model construction, the estimation pipeline and the bound calculators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("index out of range: {what} = {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("markov chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("insufficient samples for action {action}: {reason}")]
    InsufficientSamples { action: usize, reason: String },

    #[error("rank deficiency in {what}: numerical rank {rank} < required {required}")]
    RankDeficient {
        what: String,
        rank: usize,
        required: usize,
    },

    #[error("tensor power iteration did not converge (component {component}, residual {residual:.3e})")]
    NotConverged { component: usize, residual: f64 },

    #[error("degenerate component {component}: eigenvalue {value:.3e}")]
    DegenerateComponent { component: usize, value: f64 },

    #[error("degenerate instance: {quantity} = {value:.3e}")]
    DegenerateInstance { quantity: String, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
