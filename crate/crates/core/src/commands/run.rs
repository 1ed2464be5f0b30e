//! Running a keyframe strategy over a sequence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use super::{ensure_dir, read_world, CommandError};
use crate::agent::{
    actor_forward, build_observation, greedy_action, sample_action, Checkpoint, NormMode,
    RunningNorm,
};
use crate::backend::{
    generate_world, Backend, Endpoint, RemoteBackend, SyntheticWorld, WorldConfig, DEFAULT_TIMEOUT,
};
use crate::geometry::{ate_rmse, relative_pose, Alignment, Rigid3, Trajectory};
use crate::rl::reward::{compute_reward, RewardParams};
use crate::trajectory_io::{load_manifest, write_trajectory_file, PoseFormat};
use crate::window::{Action, Frame, Odometry, WindowState, DEFAULT_WINDOW};

pub const DEFAULT_TAU: f64 = 0.05;

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn yes() -> bool {
    true
}

/// Accepts a number or the strings `"inf"` / `"infinity"`.
fn f64_or_inf<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity") => {
            Ok(f64::INFINITY)
        }
        Num::S(s) => Err(serde::de::Error::custom(format!("expected a number, got `{s}`"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrategyConfig {
    /// Trained agent; greedy decisions unless `greedy` is false.
    Policy {
        checkpoint: Option<PathBuf>,
        #[serde(default = "yes")]
        greedy: bool,
    },
    /// Every frame becomes a keyframe.
    Sw,
    /// Keyframe when the estimated translation since the latest keyframe exceeds `tau` meters.
    Threshold {
        #[serde(default = "default_tau", deserialize_with = "f64_or_inf")]
        tau: f64,
    },
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self::Sw
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendConfig {
    Synthetic {
        #[serde(default)]
        world: WorldConfig,
        /// A world written by `generate`; overrides `world`.
        #[serde(default)]
        world_file: Option<PathBuf>,
    },
    Remote {
        /// `tcp://host:port` or `stdio:<command>`; `KFVO_BACKEND_ENDPOINT` wins.
        #[serde(default)]
        endpoint: Option<String>,
        manifest: PathBuf,
        #[serde(default)]
        timeout_secs: Option<f64>,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::Synthetic {
            world: WorldConfig::default(),
            world_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: StrategyConfig,
    pub backend: BackendConfig,
    pub window: usize,
    pub seed: u64,
    /// Used for the per-decision `e_tran` column when ground truth exists.
    pub reward: RewardParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyConfig::default(),
            backend: BackendConfig::default(),
            window: DEFAULT_WINDOW,
            seed: 0,
            reward: RewardParams::default(),
        }
    }
}

/// Chooses keyframes for a full window.
#[derive(Clone, Debug)]
pub enum Decider {
    Policy {
        checkpoint: Box<Checkpoint>,
        norm: RunningNorm,
        greedy: bool,
        rng: ChaCha8Rng,
    },
    KeepAll,
    Threshold(f64),
}

impl Decider {
    pub fn policy(checkpoint: Checkpoint, greedy: bool, seed: u64) -> Self {
        Self::Policy {
            norm: checkpoint.norm.clone(),
            checkpoint: Box::new(checkpoint),
            greedy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The action plus the wall time spent deciding (for the policy, the
    /// actor forward pass and action selection only).
    pub fn decide(&mut self, window: &WindowState) -> Result<(Action, Duration), CommandError> {
        let response = window
            .latest_response()
            .ok_or_else(|| CommandError::runtime("no backend response for the window"))?;
        match self {
            Self::Policy {
                checkpoint,
                norm,
                greedy,
                rng,
            } => {
                let obs = build_observation(
                    window,
                    response,
                    norm,
                    NormMode::Frozen,
                    checkpoint.toggles,
                    &checkpoint.layout,
                )?;
                let start = Instant::now();
                let logits = actor_forward(&checkpoint.params, obs.as_slice())?;
                let sample = if *greedy {
                    greedy_action(logits)
                } else {
                    sample_action(logits, rng)
                };
                let elapsed = start.elapsed();
                Ok((sample.action, elapsed))
            }
            Self::KeepAll => Ok((Action::Keyframe, Duration::ZERO)),
            Self::Threshold(tau) => {
                let start = Instant::now();
                let ids = window.ids();
                let (parent, newest) = (ids[ids.len() - 2], ids[ids.len() - 1]);
                let pose = |id| response.get(id).map(|e| e.rel_pose);
                let (Some(p), Some(n)) = (pose(parent), pose(newest)) else {
                    return Err(CommandError::runtime("response misses window frames"));
                };
                let moved = relative_pose(&p, &n).translation.norm();
                let action = if moved > *tau {
                    Action::Keyframe
                } else {
                    Action::Discard
                };
                Ok((action, start.elapsed()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub frame_id: u64,
    pub action: Action,
    /// False for the frames that filled the window initially.
    pub decided: bool,
    pub e_tran: Option<f64>,
    pub latency_ns: u64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub decisions: Vec<DecisionRecord>,
}

impl RunOutcome {
    /// Keyframe fraction among decided frames.
    pub fn keyframe_rate(&self) -> f64 {
        let decided: Vec<_> = self.decisions.iter().filter(|d| d.decided).collect();
        if decided.is_empty() {
            return f64::NAN;
        }
        decided.iter().filter(|d| d.action == Action::Keyframe).count() as f64 / decided.len() as f64
    }

    pub fn latencies_ns(&self) -> Vec<u64> {
        self.decisions
            .iter()
            .filter(|d| d.decided)
            .map(|d| d.latency_ns)
            .collect()
    }
}

/// Pushes every frame through the window, asking `decider` whenever it is full.
pub fn run_sequence<B: Backend + ?Sized>(
    frames: Vec<Frame>,
    backend: &mut B,
    window: usize,
    decider: &mut Decider,
    reward: &RewardParams,
) -> Result<RunOutcome, CommandError> {
    if window < 2 {
        return Err(CommandError::Config("window must hold at least 2 frames".into()));
    }
    let gt: HashMap<u64, Rigid3> = frames
        .iter()
        .filter_map(|f| f.gt_pose.map(|p| (f.id, p)))
        .collect();
    let has_gt = gt.len() == frames.len();
    let lookup = |id: u64| gt.get(&id).copied();

    let mut odom = Odometry::new(window);
    let mut decisions = Vec::with_capacity(frames.len());
    for frame in frames {
        let id = frame.id;
        let full = odom.process_frame(frame, backend).map_err(CommandError::runtime)?;
        if !full {
            decisions.push(DecisionRecord {
                frame_id: id,
                action: Action::Keyframe,
                decided: false,
                e_tran: None,
                latency_ns: 0,
            });
            continue;
        }
        let (action, latency) = decider.decide(&odom.window)?;
        odom.decide(action).map_err(CommandError::runtime)?;
        let e_tran = if has_gt {
            Some(compute_reward(&odom.window, &odom.map, &lookup, action, reward)?.e_tran)
        } else {
            None
        };
        decisions.push(DecisionRecord {
            frame_id: id,
            action,
            decided: true,
            e_tran,
            latency_ns: latency.as_nanos() as u64,
        });
    }
    let trajectory = odom.finalize().map_err(CommandError::runtime)?;
    Ok(RunOutcome {
        trajectory,
        decisions,
    })
}

/// Every ground-truth frame of a synthetic world, in order.
pub fn frames_for_world(world: &SyntheticWorld) -> Vec<Frame> {
    world
        .ground_truth
        .iter()
        .enumerate()
        .map(|(i, (t, pose))| Frame::new(i as u64, *t, i.to_string()).with_gt(*pose))
        .collect()
}

/// Sim3-aligned ATE and keyframe rate of one run over `world`, with the
/// backend noise stream keyed by `noise_seed`.
pub fn evaluate_on_world(
    world: &SyntheticWorld,
    decider: &mut Decider,
    window: usize,
    noise_seed: u64,
) -> Result<(f64, f64), CommandError> {
    let mut backend = world.clone();
    backend.seed = noise_seed;
    backend.request_counter = 0;
    let outcome = run_sequence(
        frames_for_world(world),
        &mut backend,
        window,
        decider,
        &RewardParams::default(),
    )?;
    let ate = ate_rmse(&outcome.trajectory, &world.ground_truth, Alignment::Sim3)
        .map_err(CommandError::runtime)?;
    Ok((ate, outcome.keyframe_rate()))
}

pub(crate) fn build_decider(strategy: &StrategyConfig, seed: u64) -> Result<Decider, CommandError> {
    Ok(match strategy {
        StrategyConfig::Sw => Decider::KeepAll,
        StrategyConfig::Threshold { tau } => {
            if !(*tau > 0.0) {
                return Err(CommandError::Config("threshold tau must be positive".into()));
            }
            Decider::Threshold(*tau)
        }
        StrategyConfig::Policy { checkpoint, greedy } => {
            let path = checkpoint.as_ref().ok_or_else(|| {
                CommandError::Config("the policy strategy requires a checkpoint".into())
            })?;
            if !path.exists() {
                return Err(CommandError::Config(format!(
                    "checkpoint {} does not exist",
                    path.display()
                )));
            }
            Decider::policy(Checkpoint::load(path)?, *greedy, seed)
        }
    })
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub outcome: RunOutcome,
    /// Sim3-aligned ATE when ground truth is available.
    pub ate: Option<f64>,
    pub estimate_path: PathBuf,
    pub decisions_path: PathBuf,
}

/// Writes `estimate.tum` (one pose per input frame) and `decisions.csv`.
pub fn cmd_run(cfg: &RunConfig, out: &Path) -> Result<RunReport, CommandError> {
    let mut decider = build_decider(&cfg.strategy, cfg.seed)?;
    if let Decider::Policy { checkpoint, .. } = &decider {
        if checkpoint.layout.window != cfg.window {
            return Err(CommandError::Config(format!(
                "checkpoint was trained with window {}, config asks for {}",
                checkpoint.layout.window, cfg.window
            )));
        }
    }
    let (outcome, gt) = match &cfg.backend {
        BackendConfig::Synthetic { world, world_file } => {
            let mut world = match world_file {
                Some(p) => read_world(p)?,
                None => generate_world(world)?,
            };
            let frames = frames_for_world(&world);
            let gt = world.ground_truth.clone();
            let outcome = run_sequence(frames, &mut world, cfg.window, &mut decider, &cfg.reward)?;
            (outcome, Some(gt))
        }
        BackendConfig::Remote {
            endpoint,
            manifest,
            timeout_secs,
        } => {
            let endpoint = Endpoint::resolve(endpoint.as_deref())?;
            let seq = load_manifest(manifest)
                .map_err(|e| CommandError::Config(format!("{}: {e}", manifest.display())))?;
            let refs = seq.frame_paths();
            let gt = seq.ground_truth.clone().filter(|g| g.len() == refs.len());
            let frames = refs
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let (t, pose) = match &gt {
                        Some(g) => (g.entries()[i].0, Some(g.entries()[i].1)),
                        None => (i as f64, None),
                    };
                    let f = Frame::new(i as u64, t, r);
                    match pose {
                        Some(p) => f.with_gt(p),
                        None => f,
                    }
                })
                .collect();
            let timeout = timeout_secs
                .map(Duration::from_secs_f64)
                .unwrap_or(DEFAULT_TIMEOUT);
            let mut backend = RemoteBackend::connect(&endpoint, timeout)?;
            let outcome = run_sequence(frames, &mut backend, cfg.window, &mut decider, &cfg.reward)?;
            (outcome, gt)
        }
    };

    ensure_dir(out)?;
    let estimate_path = out.join("estimate.tum");
    write_trajectory_file(&estimate_path, &outcome.trajectory, PoseFormat::Tum)?;
    let decisions_path = out.join("decisions.csv");
    let mut w = csv::Writer::from_path(&decisions_path)?;
    w.write_record(["frame_id", "action", "decided", "e_tran", "latency_ns"])?;
    for d in &outcome.decisions {
        w.write_record([
            d.frame_id.to_string(),
            match d.action {
                Action::Keyframe => "keyframe".into(),
                Action::Discard => "discard".into(),
            },
            d.decided.to_string(),
            d.e_tran.map(|e| format!("{e:.9}")).unwrap_or_default(),
            d.latency_ns.to_string(),
        ])?;
    }
    w.flush()?;

    let ate = match &gt {
        Some(g) => Some(ate_rmse(&outcome.trajectory, g, Alignment::Sim3).map_err(CommandError::runtime)?),
        None => None,
    };
    Ok(RunReport {
        outcome,
        ate,
        estimate_path,
        decisions_path,
    })
}
