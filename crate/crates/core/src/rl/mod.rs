//! Reward, advantage estimation, PPO updates and the training loop.

pub mod bandit;
pub mod env;
pub mod gae;
pub mod ppo;
pub mod reward;
pub mod rollout;
pub mod trainer;

use thiserror::Error;

use crate::agent::AgentError;
use crate::backend::BackendError;
use crate::window::{OdometryError, WindowError};

pub use bandit::ContextualBandit;
pub use env::{EnvObservation, EnvStep, Environment, KeyframeEnv, KeyframeEnvConfig};
pub use gae::{gae_advantages, normalize_advantages};
pub use ppo::{lr_schedule, ppo_update, Batch, MinibatchDump, PpoConfig, UpdateStats};
pub use reward::{compute_reward, reward_from_error, AlignmentUsed, ErrorMode, RewardOutcome, RewardParams};
pub use rollout::{rollout, EnvSegment, EnvWorker, RolloutBuffer, Transition};
pub use trainer::{Trainer, UpdateRecord};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Odometry(#[from] OdometryError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no ground truth for frame {0}")]
    MissingGroundTruth(u64),
    #[error("no estimate for frame {0}")]
    MissingEstimate(u64),
    #[error("sequence has {frames} frames, fewer than the window size {window}")]
    EpisodeTooShort { frames: usize, window: usize },
    #[error("environment faulted {0} times in a row")]
    TooManyFaults(usize),
    #[error("training aborted: {0}")]
    Aborted(String),
    #[error("non-finite loss in minibatch of {} samples", .0.indices.len())]
    NonFiniteLoss(Box<MinibatchDump>),
}
