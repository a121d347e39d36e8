//! Learned item-selection policy: a Q-network over posterior state, trained
//! by double Q-learning on simulated examinees.

pub mod checkpoint;
pub mod error;
pub mod network;
pub mod nn;
pub mod optim;
pub mod replay;
pub mod state;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{Result, RlError};
pub use network::{Example, NetworkConfig, QNetwork};
pub use replay::{ReplayBuffer, Transition};
pub use state::StateSnapshot;
pub use train::{
    double_q_target, reward, train, EpisodeReport, ExamineeDistribution, LogRow, TrainConfig, TrainOutcome, Trainer,
};
