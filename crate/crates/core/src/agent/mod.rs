//! The keyframe agent: observations, actor/critic networks, gradients.

pub mod checkpoint;
pub mod mlp;
pub mod observation;
pub mod optim;
pub mod policy;

use thiserror::Error;

pub use checkpoint::{config_hash, Checkpoint};
pub use mlp::{Dense, Mlp, MlpCache};
pub use observation::{
    build_observation, privileged_observation, NormMode, ObservationLayout, ObservationToggles,
    ObservationVec, RunningNorm,
};
pub use optim::Adam;
pub use policy::{
    actor_forward, critic_forward, greedy_action, log_softmax, sample_action, softmax,
    ActionSample, PolicyParams,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("observation contains NaN or infinity")]
    NonFinite,
    #[error("window is empty")]
    EmptyWindow,
    #[error("no backend estimate for frame {0}")]
    MissingEstimate(u64),
    #[error("no ground truth for frame {0}")]
    MissingGroundTruth(u64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
