//! Actor and critic networks and the two-way categorical policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::AgentError;
use crate::window::Action;

pub const DEFAULT_HIDDEN: usize = 128;
pub const ACTOR_OUTPUT_GAIN: f64 = 0.01;
pub const CRITIC_OUTPUT_GAIN: f64 = 1.0;

/// Separate actor and critic, each three affine layers with ReLU between.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyParams {
    pub fn new(actor_input: usize, critic_input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            actor: Mlp::orthogonal(&[actor_input, hidden, hidden, 2], ACTOR_OUTPUT_GAIN, rng),
            critic: Mlp::orthogonal(&[critic_input, hidden, hidden, 1], CRITIC_OUTPUT_GAIN, rng),
        }
    }

    pub fn actor_input(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn critic_input(&self) -> usize {
        self.critic.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.actor.layers[0].output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            actor: self.actor.zeros_like(),
            critic: self.critic.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic.param_count()
    }

    /// Actor parameters followed by critic parameters.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.actor.params().chain(self.critic.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.actor.params_mut().chain(self.critic.params_mut())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), AgentError> {
    if expected != got {
        return Err(AgentError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Keyframe / discard logits.
pub fn actor_forward(params: &PolicyParams, obs: &[f64]) -> Result<[f64; 2], AgentError> {
    check_dim(params.actor_input(), obs.len())?;
    let out = params.actor.forward(obs);
    Ok([out[0], out[1]])
}

pub fn critic_forward(params: &PolicyParams, obs: &[f64]) -> Result<f64, AgentError> {
    check_dim(params.critic_input(), obs.len())?;
    Ok(params.critic.forward(obs)[0])
}

pub fn log_softmax(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

pub fn softmax(logits: [f64; 2]) -> [f64; 2] {
    let l = log_softmax(logits);
    [l[0].exp(), l[1].exp()]
}

pub fn entropy(logits: [f64; 2]) -> f64 {
    let l = log_softmax(logits);
    -(l[0].exp() * l[0] + l[1].exp() * l[1])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionSample {
    pub action: Action,
    pub log_prob: f64,
    pub entropy: f64,
}

pub fn sample_action(logits: [f64; 2], rng: &mut impl Rng) -> ActionSample {
    let logp = log_softmax(logits);
    let u: f64 = rng.random();
    let action = if u < logp[0].exp() {
        Action::Keyframe
    } else {
        Action::Discard
    };
    ActionSample {
        action,
        log_prob: logp[action.index()],
        entropy: entropy(logits),
    }
}

/// Most likely action; ties go to `Keyframe`.
pub fn greedy_action(logits: [f64; 2]) -> ActionSample {
    let logp = log_softmax(logits);
    let action = if logits[0] >= logits[1] {
        Action::Keyframe
    } else {
        Action::Discard
    };
    ActionSample {
        action,
        log_prob: logp[action.index()],
        entropy: entropy(logits),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_is_uniform() {
        let params = PolicyParams {
            actor: Mlp::zeros(&[6, 4, 4, 2]),
            critic: Mlp::zeros(&[6, 4, 4, 1]),
        };
        let logits = actor_forward(&params, &[1.0; 6]).unwrap();
        assert_eq!(logits, [0.0, 0.0]);
        assert_eq!(softmax(logits), [0.5, 0.5]);
        assert_eq!(critic_forward(&params, &[1.0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = PolicyParams::new(5, 7, 8, &mut rng);
        assert!(matches!(
            actor_forward(&params, &[0.0; 4]),
            Err(AgentError::DimensionMismatch { expected: 5, got: 4 })
        ));
        assert!(critic_forward(&params, &[0.0; 5]).is_err());
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let params = PolicyParams::new(10, 10, 16, &mut rng);
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = softmax(actor_forward(&params, &x).unwrap());
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_logits_have_ln2_entropy() {
        assert!((entropy([0.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_logits_pick_keyframe() {
        let p = softmax([20.0, -20.0]);
        assert!(p[0] >= 1.0 - 1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            assert_eq!(sample_action([20.0, -20.0], &mut rng).action, Action::Keyframe);
        }
    }

    #[test]
    fn shift_invariance() {
        let a = softmax([0.3, -1.2]);
        let b = softmax([100.3, 98.8]);
        assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn empirical_frequency_matches_softmax() {
        let logits = [0.7, -0.4];
        let p = softmax(logits)[0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_action(logits, &mut rng).action == Action::Keyframe)
            .count();
        assert!((hits as f64 / n as f64 - p).abs() < 0.01);
    }
}
