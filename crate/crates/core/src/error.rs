use thiserror::Error;

use crate::models::Side;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite {side} response at x = {x:?}")]
    NonFiniteResponse { side: Side, x: Vec<f64> },

    #[error("subset simulation reached {levels} levels without entering the failure domain (last threshold {last_threshold}, partial estimate {partial_pf:e})")]
    MaxLevels { levels: usize, last_threshold: f64, partial_pf: f64 },

    #[error("subset simulation stalled: threshold {threshold} did not decrease")]
    SusStalled { threshold: f64 },

    #[error("no failure samples available for chain seeding")]
    NoFailureSamples,

    #[error("seed {index} has a log-target of -inf")]
    InvalidSeed { index: usize },

    #[error("non-finite log-target {value} at x = {x:?}")]
    NonFiniteTarget { value: f64, x: Vec<f64> },

    #[error("LF never fails under the importance density")]
    NoLfFailures,

    #[error("no HF failures among {n} importance samples; increase the sample size")]
    NoHfFailures { n: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no failures observed in {n} oracle samples; increase n")]
    OracleNoFailures { n: u64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid user input rather than numerical breakdown.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidParameter(_) | Error::Dimension { .. })
    }
}
