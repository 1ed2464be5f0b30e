//! Versioned JSON checkpoint for a trained keyframe agent.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::observation::{ObservationLayout, ObservationToggles, RunningNorm};
use super::optim::Adam;
use super::policy::PolicyParams;
use super::AgentError;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// SHA-256 of the training configuration that produced the weights.
    pub config_hash: String,
    /// Environment steps consumed so far.
    pub step: u64,
    pub layout: ObservationLayout,
    pub toggles: ObservationToggles,
    pub privileged_horizon: usize,
    pub params: PolicyParams,
    pub norm: RunningNorm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.check()?;
        Ok(ckpt)
    }

    fn check(&self) -> Result<(), AgentError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let expect_actor = self.layout.len();
        if self.params.actor_input() != expect_actor {
            return Err(AgentError::Checkpoint(format!(
                "actor input {} does not match layout width {expect_actor}",
                self.params.actor_input()
            )));
        }
        if self.norm.dim() != self.layout.pose_len() {
            return Err(AgentError::Checkpoint("normalizer width mismatch".into()));
        }
        if !self.params.actor.is_finite() || !self.params.critic.is_finite() {
            return Err(AgentError::Checkpoint("non-finite weights".into()));
        }
        Ok(())
    }
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}
