//! Training environments: the keyframe-decision MDP over a synthetic world.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::reward::{compute_reward, RewardParams};
use super::RlError;
use crate::agent::observation::raw_pose_block;
use crate::agent::{
    build_observation, privileged_observation, NormMode, ObservationLayout, ObservationToggles,
    RunningNorm,
};
use crate::backend::SyntheticWorld;
use crate::window::{Action, Frame, Odometry, DEFAULT_WINDOW};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvObservation {
    /// Actor input.
    pub actor: Vec<f64>,
    /// Critic input (may include privileged features).
    pub critic: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub reward: f64,
    pub done: bool,
    /// Next observation; `None` once the episode is over.
    pub next: Option<EnvObservation>,
    pub e_tran: Option<f64>,
    /// Whether the action was the best available, when the environment knows.
    pub optimal: Option<bool>,
}

pub trait Environment: Send {
    fn actor_dim(&self) -> usize;
    fn critic_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<EnvObservation, RlError>;
    fn step(&mut self, action: Action, rng: &mut ChaCha8Rng) -> Result<EnvStep, RlError>;

    /// Replaces the observation normalizer with a shared snapshot.
    fn sync_norm(&mut self, _norm: &RunningNorm) {}

    /// Statistics ingested since the last call.
    fn take_norm_delta(&mut self) -> Option<RunningNorm> {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeyframeEnvConfig {
    pub window: usize,
    pub toggles: ObservationToggles,
    pub privileged_horizon: usize,
    pub reward: RewardParams,
    pub frame_drop_prob: f64,
}

impl Default for KeyframeEnvConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            toggles: ObservationToggles::default(),
            privileged_horizon: crate::agent::observation::DEFAULT_PRIVILEGED_HORIZON,
            reward: RewardParams::default(),
            frame_drop_prob: 0.0,
        }
    }
}

/// One decision per frame after the window first fills; an episode is one
/// pass over the world's frames.
#[derive(Clone, Debug)]
pub struct KeyframeEnv {
    world: SyntheticWorld,
    cfg: KeyframeEnvConfig,
    layout: ObservationLayout,
    odom: Odometry,
    next_id: u64,
    norm: RunningNorm,
    delta: RunningNorm,
}

impl KeyframeEnv {
    pub fn new(world: SyntheticWorld, cfg: KeyframeEnvConfig) -> Result<Self, RlError> {
        if cfg.window < 2 {
            return Err(RlError::BadConfig("window must hold at least 2 frames".into()));
        }
        if world.len() < cfg.window {
            return Err(RlError::EpisodeTooShort {
                frames: world.len(),
                window: cfg.window,
            });
        }
        cfg.reward.validate()?;
        let layout = ObservationLayout::new(world.token_dim, cfg.window);
        Ok(Self {
            odom: Odometry::new(cfg.window),
            norm: RunningNorm::new(layout.pose_len()),
            delta: RunningNorm::new(layout.pose_len()),
            next_id: 0,
            world,
            cfg,
            layout,
        })
    }

    pub fn layout(&self) -> ObservationLayout {
        self.layout
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }

    pub fn odometry(&self) -> &Odometry {
        &self.odom
    }

    /// Next frame to push, skipping frames at random. Frame 0 is never skipped.
    fn next_frame(&mut self, rng: &mut ChaCha8Rng) -> Option<Frame> {
        loop {
            let id = self.next_id;
            let pose = *self.world.gt_pose(id)?;
            self.next_id += 1;
            let drop = id > 0
                && self.cfg.frame_drop_prob > 0.0
                && rng.random::<f64>() < self.cfg.frame_drop_prob;
            if !drop {
                let t = self.world.timestamp(id).expect("pose exists");
                return Some(Frame::new(id, t, id.to_string()).with_gt(pose));
            }
        }
    }

    fn observe(&mut self) -> Result<EnvObservation, RlError> {
        let window = &self.odom.window;
        let response = window
            .latest_response()
            .ok_or(crate::window::WindowError::NotReady)?;
        let raw = raw_pose_block(window, response, &self.layout)?;
        self.delta.update(&raw);
        let obs = build_observation(
            window,
            response,
            &mut self.norm,
            NormMode::Update,
            self.cfg.toggles,
            &self.layout,
        )?;
        let world = &self.world;
        let gt = |id: u64| world.gt_pose(id).copied();
        let critic = privileged_observation(
            &obs,
            window,
            &self.odom.map,
            &gt,
            self.cfg.privileged_horizon,
            &self.layout,
        )?;
        Ok(EnvObservation {
            actor: obs.0,
            critic,
        })
    }
}

impl Environment for KeyframeEnv {
    fn actor_dim(&self) -> usize {
        self.layout.len()
    }

    fn critic_dim(&self) -> usize {
        self.layout.privileged_len(self.cfg.privileged_horizon)
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<EnvObservation, RlError> {
        self.odom = Odometry::new(self.cfg.window);
        self.next_id = 0;
        loop {
            let Some(frame) = self.next_frame(rng) else {
                return Err(RlError::EpisodeTooShort {
                    frames: self.world.len(),
                    window: self.cfg.window,
                });
            };
            if self.odom.process_frame(frame, &mut self.world)? {
                return self.observe();
            }
        }
    }

    fn step(&mut self, action: Action, rng: &mut ChaCha8Rng) -> Result<EnvStep, RlError> {
        self.odom.decide(action)?;
        let world = &self.world;
        let gt = |id: u64| world.gt_pose(id).copied();
        let outcome = compute_reward(&self.odom.window, &self.odom.map, &gt, action, &self.cfg.reward)?;
        let next = match self.next_frame(rng) {
            None => None,
            Some(frame) => {
                self.odom.process_frame(frame, &mut self.world)?;
                Some(self.observe()?)
            }
        };
        Ok(EnvStep {
            reward: outcome.reward,
            done: next.is_none(),
            next,
            e_tran: Some(outcome.e_tran),
            optimal: None,
        })
    }

    fn sync_norm(&mut self, norm: &RunningNorm) {
        self.norm = norm.clone();
    }

    fn take_norm_delta(&mut self) -> Option<RunningNorm> {
        let fresh = RunningNorm::new(self.layout.pose_len());
        Some(std::mem::replace(&mut self.delta, fresh))
    }
}
