use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient history: need {needed} past values, got {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("state space of size {size} exceeds the enumeration limit {limit}")]
    StateSpaceTooLarge { size: usize, limit: usize },

    #[error("contraction condition fails: {0}")]
    ContractionFailed(String),

    #[error("past sequence too short for the requested tolerance: need {required} values, got {got}")]
    HistoryTooShort { required: usize, got: usize },

    #[error("no summability certificate: {0}")]
    NotSummable(String),

    #[error("index {index} outside the certified range (max {max})")]
    OutOfRange { index: usize, max: usize },

    #[error("matrix is not row-stochastic: {0}")]
    NotStochastic(String),

    #[error("contraction certificate {achieved:e} not below target after depth {depth}")]
    CertificateNotReached { achieved: f64, depth: usize },

    #[error("impossible path: transition at step {step} has probability zero")]
    ImpossiblePath { step: usize },

    #[error("Newton iterations diverge (|theta|_inf = {norm:.3}); likely complete separation")]
    Separation { norm: f64 },

    #[error("singular Hessian at iteration {iteration}")]
    SingularHessian { iteration: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
