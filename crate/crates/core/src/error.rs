use thiserror::Error;

use crate::trade::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} assets, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid price at asset {index}: {value} (prices must be positive and finite)")]
    InvalidPrice { index: usize, value: f64 },

    #[error(
        "invalid holding at asset {index}: {value} (holdings must be non-negative and finite)"
    )]
    InvalidHolding { index: usize, value: f64 },

    #[error("capital must be positive and finite, got {0}")]
    NonPositiveCapital(f64),

    #[error("portfolio total value must be positive, got {0}")]
    EmptyPortfolio(f64),

    #[error("asset index {index} out of range for {n} assets")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("sub-temperature of asset {index} is zero; log quantities are undefined")]
    ZeroSubTemperature { index: usize },

    #[error("invalid trade: {0}")]
    InvalidTrade(String),

    #[error("trade {position} rejected: {violation}")]
    IllegalTrade {
        position: usize,
        violation: Violation,
    },

    #[error(
        "pre and post states differ in prices or weights; entropy is attributed to trades only"
    )]
    PriceMismatch,

    #[error("negative entropy production {delta:e} exceeds tolerance")]
    NegativeEntropy { delta: f64 },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid path spec: {0}")]
    InvalidSpec(String),

    #[error("invalid price path: {0}")]
    InvalidPath(String),

    #[error("csv row {row}: {message}")]
    Csv { row: u64, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invariant breach at step {step}: {message}")]
    InvariantBreach { step: usize, message: String },

    #[error("report has no step records; per-step checks need --record-steps")]
    MissingStepRecords,

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
