//! Alternating rollout and PPO update phases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::Environment;
use super::ppo::{lr_schedule, ppo_update, PpoConfig};
use super::rollout::{rollout, EnvWorker};
use super::RlError;
use crate::agent::{Adam, PolicyParams, RunningNorm};

/// One row of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    /// Environment steps consumed after this update.
    pub step: u64,
    pub lr: f64,
    pub mean_reward: f64,
    pub keyframe_rate: f64,
    pub mean_e_tran: f64,
    pub optimal_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
    pub episodes: usize,
    pub faults: usize,
}

pub struct Trainer<E> {
    pub cfg: PpoConfig,
    pub params: PolicyParams,
    pub adam: Adam,
    /// Shared pose normalizer, for environments that have one.
    pub norm: Option<RunningNorm>,
    pub step: u64,
    pub updates: usize,
    workers: Vec<EnvWorker<E>>,
    rng: ChaCha8Rng,
}

impl<E: Environment> Trainer<E> {
    /// Fresh networks for `envs`, which must number `cfg.n_envs` and agree
    /// on observation widths.
    pub fn new(cfg: PpoConfig, envs: Vec<E>, hidden: usize, seed: u64) -> Result<Self, RlError> {
        cfg.validate()?;
        if envs.len() != cfg.n_envs {
            return Err(RlError::BadConfig(format!(
                "expected {} environments, got {}",
                cfg.n_envs,
                envs.len()
            )));
        }
        let (actor_dim, critic_dim) = (envs[0].actor_dim(), envs[0].critic_dim());
        if envs
            .iter()
            .any(|e| e.actor_dim() != actor_dim || e.critic_dim() != critic_dim)
        {
            return Err(RlError::BadConfig("environments disagree on observation width".into()));
        }
        if hidden == 0 {
            return Err(RlError::BadConfig("hidden width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PolicyParams::new(actor_dim, critic_dim, hidden, &mut rng);
        let mut envs = envs;
        let norm = envs[0].take_norm_delta().map(|n| RunningNorm::new(n.dim()));
        let workers = envs
            .into_iter()
            .map(|e| EnvWorker::new(e, rng.random()))
            .collect();
        Ok(Self {
            adam: Adam::new(params.param_count()),
            cfg,
            params,
            norm,
            step: 0,
            updates: 0,
            workers,
            rng,
        })
    }

    /// Continues from saved state. RNG streams are re-derived from `seed`
    /// and the restored step so a resumed run does not replay old episodes.
    pub fn resume(
        &mut self,
        params: PolicyParams,
        norm: Option<RunningNorm>,
        adam: Option<Adam>,
        step: u64,
        seed: u64,
    ) -> Result<(), RlError> {
        if params.actor_input() != self.params.actor_input()
            || params.critic_input() != self.params.critic_input()
        {
            return Err(RlError::BadConfig("checkpoint does not match environment widths".into()));
        }
        self.adam = adam
            .filter(|a| a.param_count() == params.param_count())
            .unwrap_or_else(|| Adam::new(params.param_count()));
        self.params = params;
        if norm.is_some() {
            self.norm = norm;
        }
        self.step = step;
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ step.rotate_left(17));
        for w in &mut self.workers {
            w.reseed(self.rng.random());
        }
        Ok(())
    }

    pub fn workers(&self) -> &[EnvWorker<E>] {
        &self.workers
    }

    pub fn done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// One rollout phase followed by one PPO update.
    pub fn update(&mut self) -> Result<UpdateRecord, RlError> {
        let lr = lr_schedule(self.step, self.cfg.total_steps, self.cfg.lr_start, self.cfg.lr_end);
        if let Some(norm) = &self.norm {
            for w in &mut self.workers {
                w.env.sync_norm(norm);
            }
        }
        let buffer = rollout(&mut self.workers, &self.params, self.cfg.rollout_len)?;
        if let Some(norm) = &mut self.norm {
            for w in &mut self.workers {
                if let Some(delta) = w.env.take_norm_delta() {
                    norm.merge(&delta);
                }
            }
        }
        let steps = buffer.len() as u64;
        let mut record = UpdateRecord {
            update: self.updates + 1,
            step: self.step + steps,
            lr,
            mean_reward: buffer.mean_reward(),
            keyframe_rate: buffer.keyframe_rate(),
            mean_e_tran: buffer.mean_e_tran(),
            optimal_rate: buffer.optimal_rate(),
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            clip_fraction: 0.0,
            approx_kl: 0.0,
            grad_norm: 0.0,
            episodes: buffer.episodes(),
            faults: buffer.faults(),
        };
        let batch = buffer.into_batch(self.cfg.gamma, self.cfg.gae_lambda);
        let stats = ppo_update(&mut self.params, &mut self.adam, &batch, &self.cfg, lr, &mut self.rng)?;
        record.policy_loss = stats.policy_loss;
        record.value_loss = stats.value_loss;
        record.entropy = stats.entropy;
        record.clip_fraction = stats.clip_fraction;
        record.approx_kl = stats.approx_kl;
        record.grad_norm = stats.grad_norm;
        self.step += steps;
        self.updates += 1;
        Ok(record)
    }

    /// Updates until `cfg.total_steps` is reached, calling `on_update` after each.
    pub fn train(
        &mut self,
        mut on_update: impl FnMut(&UpdateRecord, &Self) -> Result<(), RlError>,
    ) -> Result<Vec<UpdateRecord>, RlError> {
        let mut records = Vec::new();
        while !self.done() {
            let record = self.update()?;
            on_update(&record, self)?;
            records.push(record);
        }
        Ok(records)
    }
}
