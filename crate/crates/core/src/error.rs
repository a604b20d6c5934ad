use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),

    #[error("covariance matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("replication {replication}: non-finite state at t = {time}: {state:?}")]
    Diverged { replication: u64, time: f64, state: Vec<f64> },

    #[error("closed-form continuous generator needs a diagonal covariance; use the Monte Carlo estimator")]
    NonDiagonalCovariance,

    #[error("empty sample: {0}")]
    EmptySample(String),

    #[error("histogram binning mismatch")]
    BinningMismatch,

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
