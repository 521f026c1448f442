use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("not a probability vector: {0}")]
    NotOnSimplex(String),

    /// Log-loss divergence where the score puts zero mass on a class the
    /// reference distribution can produce.
    #[error("log-loss divergence is infinite: s[{index}] = 0 while q[{index}] > 0")]
    InfiniteDivergence { index: usize },

    #[error("empty sample")]
    EmptySample,

    #[error("class index {index} out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },

    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no features available for partitioning")]
    NoFeatures,

    #[error("invalid simulator: {0}")]
    InvalidSimulator(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
