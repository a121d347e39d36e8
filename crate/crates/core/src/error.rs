use thiserror::Error;

pub type Result<T> = std::result::Result<T, CatError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatError {
    #[error("item index {index} out of bounds for bank of {len} items")]
    ItemOutOfBounds { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid probability {0}")]
    InvalidProbability(f64),

    #[error("invalid response value {0}, expected 0 or 1")]
    InvalidResponse(u8),

    #[error("invalid item bank: {0}")]
    InvalidBank(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("the prior (no administered items) has no SUN parameters")]
    PriorHasNoSunParams,

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("truncation region probability underflow (log probability {0})")]
    RegionUnderflow(f64),

    #[error("no available items to select from")]
    NoAvailableItems,

    #[error("empty parameter ensemble")]
    EmptyEnsemble,

    #[error("not enough samples: need at least {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),
}
