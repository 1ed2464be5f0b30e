//! Clipped-surrogate PPO over a separate actor and (privileged) critic.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gae::normalize_advantages;
use super::RlError;
use crate::agent::policy::log_softmax;
use crate::agent::{Adam, PolicyParams};
use crate::window::Action;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub n_envs: usize,
    /// Recorded transitions per environment per update.
    pub rollout_len: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub total_steps: u64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Probability of skipping an incoming frame while training.
    pub frame_drop_prob: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 10,
            minibatch: 64,
            n_envs: 20,
            rollout_len: 512,
            lr_start: 3e-4,
            lr_end: 3e-5,
            total_steps: 200_000,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            frame_drop_prob: 0.1,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::BadConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must be in (0, 1)");
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad("learning rates must satisfy lr_start >= lr_end > 0");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.n_envs == 0 || self.rollout_len == 0 {
            return bad("epochs, minibatch, n_envs and rollout_len must be positive");
        }
        if !(0.0..1.0).contains(&self.frame_drop_prob) {
            return bad("frame_drop_prob must be in [0, 1)");
        }
        if !(self.max_grad_norm > 0.0) || self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("max_grad_norm must be positive and loss coefficients non-negative");
        }
        Ok(())
    }

    pub fn steps_per_update(&self) -> u64 {
        (self.n_envs * self.rollout_len) as u64
    }
}

/// Linear decay from `lr_start` at step 0 to `lr_end` at `total`.
pub fn lr_schedule(step: u64, total: u64, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_end;
    }
    let frac = (step.min(total) as f64) / total as f64;
    lr_start + (lr_end - lr_start) * frac
}

/// Flattened rollout data, one column per transition.
#[derive(Clone, Debug)]
pub struct Batch {
    pub actor_obs: DMatrix<f64>,
    pub critic_obs: DMatrix<f64>,
    pub actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn from_columns(
        actor_obs: &[Vec<f64>],
        critic_obs: &[Vec<f64>],
        actions: Vec<Action>,
        old_log_probs: Vec<f64>,
        advantages: Vec<f64>,
        returns: Vec<f64>,
    ) -> Self {
        let n = actions.len();
        assert!(
            [actor_obs.len(), critic_obs.len(), old_log_probs.len(), advantages.len(), returns.len()]
                .iter()
                .all(|&l| l == n),
            "batch fields must have equal length"
        );
        let stack = |cols: &[Vec<f64>]| {
            let rows = cols.first().map_or(0, Vec::len);
            DMatrix::from_fn(rows, n, |r, c| cols[c][r])
        };
        Self {
            actor_obs: stack(actor_obs),
            critic_obs: stack(critic_obs),
            actions,
            old_log_probs,
            advantages,
            returns,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Losses and diagnostics averaged over every minibatch of an update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Everything needed to reproduce a minibatch whose loss went non-finite.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinibatchDump {
    pub indices: Vec<usize>,
    pub actor_obs: Vec<Vec<f64>>,
    pub critic_obs: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Gradients of `policy + value_coef · value − entropy_coef · entropy`
/// on the columns `indices`, plus the unweighted loss terms.
pub fn ppo_minibatch_gradients(
    params: &PolicyParams,
    batch: &Batch,
    advantages: &[f64],
    indices: &[usize],
    cfg: &PpoConfig,
) -> (PolicyParams, UpdateStats) {
    let m = indices.len();
    let inv_m = 1.0 / m as f64;
    let x = batch.actor_obs.select_columns(indices);
    let xc = batch.critic_obs.select_columns(indices);

    let (logits, actor_cache) = params.actor.forward_batch(&x);
    let mut d_logits = DMatrix::zeros(2, m);
    let mut stats = UpdateStats::default();
    for (c, &i) in indices.iter().enumerate() {
        let logp = log_softmax([logits[(0, c)], logits[(1, c)]]);
        let p = [logp[0].exp(), logp[1].exp()];
        let a = batch.actions[i].index();
        let adv = advantages[i];
        let log_ratio = logp[a] - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
        stats.policy_loss -= unclipped.min(clipped) * inv_m;
        if (ratio - 1.0).abs() > cfg.clip_eps {
            stats.clip_fraction += inv_m;
        }
        stats.approx_kl += ((ratio - 1.0) - log_ratio) * inv_m;
        let h = -(p[0] * logp[0] + p[1] * logp[1]);
        stats.entropy += h * inv_m;

        // d(−min(...))/d logπ(a): only the unclipped branch depends on θ.
        let g_logp = if unclipped <= clipped { -unclipped } else { 0.0 };
        for j in 0..2 {
            let onehot = if j == a { 1.0 } else { 0.0 };
            let d_policy = g_logp * (onehot - p[j]);
            // dH/dz_j = −p_j (log p_j + H)
            let d_entropy = -p[j] * (logp[j] + h);
            d_logits[(j, c)] = (d_policy - cfg.entropy_coef * d_entropy) * inv_m;
        }
    }

    let (values, critic_cache) = params.critic.forward_batch(&xc);
    let mut d_values = DMatrix::zeros(1, m);
    for (c, &i) in indices.iter().enumerate() {
        let err = values[(0, c)] - batch.returns[i];
        stats.value_loss += err * err * inv_m;
        d_values[(0, c)] = cfg.value_coef * 2.0 * err * inv_m;
    }

    let grads = PolicyParams {
        actor: params.actor.backward(&actor_cache, &d_logits),
        critic: params.critic.backward(&critic_cache, &d_values),
    };
    stats.minibatches = 1;
    (grads, stats)
}

fn dump(batch: &Batch, advantages: &[f64], indices: &[usize], stats: &UpdateStats) -> MinibatchDump {
    let col = |m: &DMatrix<f64>, i: usize| m.column(i).iter().copied().collect::<Vec<_>>();
    MinibatchDump {
        indices: indices.to_vec(),
        actor_obs: indices.iter().map(|&i| col(&batch.actor_obs, i)).collect(),
        critic_obs: indices.iter().map(|&i| col(&batch.critic_obs, i)).collect(),
        actions: indices.iter().map(|&i| batch.actions[i]).collect(),
        old_log_probs: indices.iter().map(|&i| batch.old_log_probs[i]).collect(),
        advantages: indices.iter().map(|&i| advantages[i]).collect(),
        returns: indices.iter().map(|&i| batch.returns[i]).collect(),
        policy_loss: stats.policy_loss,
        value_loss: stats.value_loss,
        entropy: stats.entropy,
    }
}

/// `epochs` passes of shuffled minibatch Adam steps over `batch`.
pub fn ppo_update(
    params: &mut PolicyParams,
    adam: &mut Adam,
    batch: &Batch,
    cfg: &PpoConfig,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<UpdateStats, RlError> {
    if batch.is_empty() {
        return Ok(UpdateStats::default());
    }
    let mut advantages = batch.advantages.clone();
    if cfg.normalize_advantages {
        normalize_advantages(&mut advantages);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut total = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for indices in order.chunks(cfg.minibatch) {
            let (mut grads, stats) = ppo_minibatch_gradients(params, batch, &advantages, indices, cfg);
            let norm = (grads.actor.squared_norm() + grads.critic.squared_norm()).sqrt();
            let losses = [stats.policy_loss, stats.value_loss, stats.entropy];
            if losses.iter().any(|v| !v.is_finite()) || !norm.is_finite() {
                return Err(RlError::NonFiniteLoss(Box::new(dump(
                    batch,
                    &advantages,
                    indices,
                    &stats,
                ))));
            }
            if norm > cfg.max_grad_norm {
                let scale = cfg.max_grad_norm / (norm + 1e-6);
                grads.params_mut().for_each(|g| *g *= scale);
            }
            adam.step(params.params_mut(), grads.params(), lr);

            total.policy_loss += stats.policy_loss;
            total.value_loss += stats.value_loss;
            total.entropy += stats.entropy;
            total.clip_fraction += stats.clip_fraction;
            total.approx_kl += stats.approx_kl;
            total.grad_norm += norm;
            total.minibatches += 1;
        }
    }
    let k = total.minibatches as f64;
    total.policy_loss /= k;
    total.value_loss /= k;
    total.entropy /= k;
    total.clip_fraction /= k;
    total.approx_kl /= k;
    total.grad_norm /= k;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_batch(params: &PolicyParams, n: usize, rng: &mut ChaCha8Rng) -> Batch {
        let obs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..params.actor_input()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let actions: Vec<Action> = (0..n).map(|i| Action::from_index(i % 2)).collect();
        let logp: Vec<f64> = obs
            .iter()
            .zip(&actions)
            .map(|(o, a)| log_softmax(crate::agent::actor_forward(params, o).unwrap())[a.index()])
            .collect();
        let adv: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ret: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Batch::from_columns(&obs, &obs, actions, logp, adv, ret)
    }

    #[test]
    fn lr_schedule_endpoints() {
        assert_eq!(lr_schedule(0, 1000, 3e-4, 3e-5), 3e-4);
        assert!((lr_schedule(1000, 1000, 3e-4, 3e-5) - 3e-5).abs() < 1e-18);
        assert!((lr_schedule(500, 1000, 3e-4, 3e-5) - 1.65e-4).abs() < 1e-18);
    }

    #[test]
    fn unit_ratio_policy_loss_is_negative_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = PolicyParams::new(5, 5, 16, &mut rng);
        let batch = toy_batch(&params, 32, &mut rng);
        let idx: Vec<usize> = (0..32).collect();
        let (_, stats) = ppo_minibatch_gradients(&params, &batch, &batch.advantages, &idx, &PpoConfig::default());
        let mean_adv = batch.advantages.iter().sum::<f64>() / 32.0;
        assert!((stats.policy_loss + mean_adv).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 0.0);
        assert!(stats.approx_kl.abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        for bad in [
            PpoConfig { gamma: 0.0, ..PpoConfig::default() },
            PpoConfig { clip_eps: 1.0, ..PpoConfig::default() },
            PpoConfig { lr_end: 1e-3, ..PpoConfig::default() },
            PpoConfig { minibatch: 0, ..PpoConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut params = PolicyParams::new(5, 5, 16, &mut rng);
            let batch = toy_batch(&params, 100, &mut rng);
            let mut adam = Adam::new(params.param_count());
            let stats = ppo_update(&mut params, &mut adam, &batch, &PpoConfig::default(), 3e-4, &mut rng).unwrap();
            (params, stats)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert_eq!(sa.minibatches, 10 * 2);
    }

    #[test]
    fn non_finite_input_is_reported_with_dump() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = PolicyParams::new(3, 3, 8, &mut rng);
        let mut batch = toy_batch(&params, 8, &mut rng);
        batch.returns[2] = f64::NAN;
        let mut adam = Adam::new(params.param_count());
        let cfg = PpoConfig { minibatch: 8, ..PpoConfig::default() };
        match ppo_update(&mut params, &mut adam, &batch, &cfg, 1e-3, &mut rng) {
            Err(RlError::NonFiniteLoss(d)) => assert_eq!(d.indices.len(), 8),
            other => panic!("unexpected {other:?}"),
        }
    }
}
