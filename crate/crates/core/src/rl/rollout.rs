//! Parallel experience collection.
//!
//! Each worker owns one environment and its RNG and writes only to its own
//! segment, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::env::{EnvObservation, Environment};
use super::gae::gae_advantages;
use super::ppo::Batch;
use super::RlError;
use crate::agent::{actor_forward, critic_forward, sample_action, PolicyParams};
use crate::window::Action;

/// Consecutive faults after which a worker gives up.
pub const MAX_CONSECUTIVE_FAULTS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub actor_obs: Vec<f64>,
    pub critic_obs: Vec<f64>,
    pub action: Action,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    /// The episode ended with this step.
    pub done: bool,
    pub e_tran: Option<f64>,
    pub optimal: Option<bool>,
}

/// Transitions from one worker, in time order.
#[derive(Clone, Debug, Default)]
pub struct EnvSegment {
    pub transitions: Vec<Transition>,
    /// Critic value of the state after the last transition (0 if it was terminal).
    pub last_value: f64,
    pub episodes: usize,
    pub faults: usize,
}

#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub segments: Vec<EnvSegment>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.segments.iter().flat_map(|s| &s.transitions)
    }

    fn mean_of(&self, f: impl Fn(&Transition) -> Option<f64>) -> f64 {
        let (sum, n) = self
            .transitions()
            .filter_map(f)
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }

    pub fn mean_reward(&self) -> f64 {
        self.mean_of(|t| Some(t.reward))
    }

    pub fn keyframe_rate(&self) -> f64 {
        self.mean_of(|t| Some(if t.action == Action::Keyframe { 1.0 } else { 0.0 }))
    }

    pub fn mean_e_tran(&self) -> f64 {
        self.mean_of(|t| t.e_tran)
    }

    /// Fraction of optimal actions, `NaN` when the environment does not know.
    pub fn optimal_rate(&self) -> f64 {
        self.mean_of(|t| t.optimal.map(|o| if o { 1.0 } else { 0.0 }))
    }

    pub fn episodes(&self) -> usize {
        self.segments.iter().map(|s| s.episodes).sum()
    }

    pub fn faults(&self) -> usize {
        self.segments.iter().map(|s| s.faults).sum()
    }

    /// Runs GAE per segment and flattens everything into one batch.
    pub fn into_batch(self, gamma: f64, lambda: f64) -> Batch {
        let n = self.len();
        let mut actor = Vec::with_capacity(n);
        let mut critic = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut logp = Vec::with_capacity(n);
        let mut advantages = Vec::with_capacity(n);
        let mut returns = Vec::with_capacity(n);
        for seg in self.segments {
            let rewards: Vec<f64> = seg.transitions.iter().map(|t| t.reward).collect();
            let values: Vec<f64> = seg.transitions.iter().map(|t| t.value).collect();
            let dones: Vec<bool> = seg.transitions.iter().map(|t| t.done).collect();
            let (adv, ret) = gae_advantages(&rewards, &values, &dones, seg.last_value, gamma, lambda);
            advantages.extend(adv);
            returns.extend(ret);
            for t in seg.transitions {
                actor.push(t.actor_obs);
                critic.push(t.critic_obs);
                actions.push(t.action);
                logp.push(t.log_prob);
            }
        }
        Batch::from_columns(&actor, &critic, actions, logp, advantages, returns)
    }
}

/// An environment with its own RNG stream and in-flight observation.
#[derive(Clone, Debug)]
pub struct EnvWorker<E> {
    pub env: E,
    rng: ChaCha8Rng,
    current: Option<EnvObservation>,
}

impl<E: Environment> EnvWorker<E> {
    pub fn new(env: E, seed: u64) -> Self {
        Self {
            env,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: None,
        }
    }

    /// Restarts the RNG stream; the next step begins a new episode.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.current = None;
    }

    /// Collects exactly `steps` transitions. A step that fails discards the
    /// unfinished episode and resets the environment.
    pub fn collect(&mut self, params: &PolicyParams, steps: usize) -> Result<EnvSegment, RlError> {
        let mut seg = EnvSegment::default();
        let mut partial: Vec<Transition> = Vec::new();
        let mut consecutive = 0usize;
        while seg.transitions.len() + partial.len() < steps {
            let obs = match self.current.take() {
                Some(o) => o,
                None => match self.env.reset(&mut self.rng) {
                    Ok(o) => o,
                    Err(e) => {
                        self.fault(&mut seg, &mut partial, &mut consecutive, e)?;
                        continue;
                    }
                },
            };
            let logits = actor_forward(params, &obs.actor)?;
            let sample = sample_action(logits, &mut self.rng);
            let value = critic_forward(params, &obs.critic)?;
            match self.env.step(sample.action, &mut self.rng) {
                Ok(step) => {
                    consecutive = 0;
                    partial.push(Transition {
                        actor_obs: obs.actor,
                        critic_obs: obs.critic,
                        action: sample.action,
                        log_prob: sample.log_prob,
                        reward: step.reward,
                        value,
                        done: step.done,
                        e_tran: step.e_tran,
                        optimal: step.optimal,
                    });
                    if step.done {
                        seg.transitions.append(&mut partial);
                        seg.episodes += 1;
                    } else {
                        self.current = step.next;
                    }
                }
                Err(e) => self.fault(&mut seg, &mut partial, &mut consecutive, e)?,
            }
        }
        seg.transitions.append(&mut partial);
        seg.last_value = match &self.current {
            Some(o) => critic_forward(params, &o.critic)?,
            None => 0.0,
        };
        Ok(seg)
    }

    fn fault(
        &mut self,
        seg: &mut EnvSegment,
        partial: &mut Vec<Transition>,
        consecutive: &mut usize,
        err: RlError,
    ) -> Result<(), RlError> {
        log::warn!("environment fault, dropping {} transitions: {err}", partial.len());
        partial.clear();
        self.current = None;
        seg.faults += 1;
        *consecutive += 1;
        if *consecutive >= MAX_CONSECUTIVE_FAULTS {
            return Err(RlError::TooManyFaults(*consecutive));
        }
        Ok(())
    }
}

/// `steps` transitions from every worker, collected in parallel.
pub fn rollout<E: Environment>(
    workers: &mut [EnvWorker<E>],
    params: &PolicyParams,
    steps: usize,
) -> Result<RolloutBuffer, RlError> {
    let segments = workers
        .par_iter_mut()
        .map(|w| w.collect(params, steps))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RolloutBuffer { segments })
}
