//! Two-state contextual bandit used to sanity-check the PPO machinery.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::env::{EnvObservation, EnvStep, Environment};
use super::RlError;
use crate::window::Action;

/// Each episode is one step. The context is a one-hot state; the action whose
/// index equals the state pays `reward_correct`, the other `reward_wrong`.
#[derive(Clone, Debug)]
pub struct ContextualBandit {
    pub reward_correct: f64,
    pub reward_wrong: f64,
    state: usize,
}

impl Default for ContextualBandit {
    fn default() -> Self {
        Self {
            reward_correct: 0.001,
            reward_wrong: -0.01,
            state: 0,
        }
    }
}

impl ContextualBandit {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observation(state: usize) -> Vec<f64> {
        let mut v = vec![0.0; 2];
        v[state] = 1.0;
        v
    }
}

impl Environment for ContextualBandit {
    fn actor_dim(&self) -> usize {
        2
    }

    fn critic_dim(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<EnvObservation, RlError> {
        self.state = rng.random_range(0..2);
        let obs = Self::observation(self.state);
        Ok(EnvObservation {
            critic: obs.clone(),
            actor: obs,
        })
    }

    fn step(&mut self, action: Action, _rng: &mut ChaCha8Rng) -> Result<EnvStep, RlError> {
        let correct = action.index() == self.state;
        Ok(EnvStep {
            reward: if correct {
                self.reward_correct
            } else {
                self.reward_wrong
            },
            done: true,
            next: None,
            e_tran: None,
            optimal: Some(correct),
        })
    }
}
