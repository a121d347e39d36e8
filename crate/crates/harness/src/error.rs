use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] deepcat_core::CatError),
    #[error(transparent)]
    Rl(#[from] deepcat_rl::RlError),
    #[error("unknown selector {0:?}")]
    UnknownSelector(String),
    #[error("selector \"qlearning\" requires a loaded policy")]
    PolicyNotLoaded,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("session already finished")]
    SessionFinished,
    #[error("item {item} is not the pending item (expected {expected:?})")]
    UnexpectedItem { item: usize, expected: Option<usize> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
