//! Desk-scale surrogate for a multi-view foundation model.
//!
//! Relative poses are ground truth plus Gaussian noise whose standard
//! deviation grows as the window's mean inter-frame baseline shrinks:
//!
//! ```text
//! σ = σ₀ · (1 + κ / (b̄ + ε))
//! ```
//!
//! Translation noise has per-axis std `σ`, rotation-vector noise `σ / 10`.
//! Tokens are `tanh(Φ · φ(pose)) + N(0, σ_tok)` where `φ` stacks the rotation
//! rows and the translation of the frame's ground-truth world pose.

use std::f64::consts::{PI, TAU};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendRequest, BackendResponse, FrameEstimate};
use crate::geometry::{relative_pose, Rigid3, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Base translation noise, meters.
    pub sigma0: f64,
    /// Low-parallax amplification length, meters.
    pub kappa: f64,
    /// Regularizer keeping σ finite at zero baseline, meters.
    pub epsilon: f64,
    /// Additive token noise std.
    pub sigma_token: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            sigma0: 0.01,
            kappa: 0.02,
            epsilon: 0.01,
            sigma_token: 0.05,
        }
    }
}

impl NoiseParams {
    pub fn zero() -> Self {
        Self {
            sigma0: 0.0,
            sigma_token: 0.0,
            ..Self::default()
        }
    }

    /// Translation noise std for a window with mean baseline `mean_baseline`.
    pub fn sigma(&self, mean_baseline: f64) -> f64 {
        self.sigma0 * (1.0 + self.kappa / (mean_baseline.max(0.0) + self.epsilon))
    }

    fn validate(&self) -> Result<(), BackendError> {
        let all = [self.sigma0, self.kappa, self.epsilon, self.sigma_token];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(BackendError::BadConfig(
                "noise parameters must be finite and non-negative".into(),
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(BackendError::BadConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionProfile {
    Orbit,
    Corridor,
    #[default]
    StopAndGo,
    RandomWalk,
}

impl std::str::FromStr for MotionProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orbit" => Ok(Self::Orbit),
            "corridor" => Ok(Self::Corridor),
            "stop-and-go" | "stop_and_go" => Ok(Self::StopAndGo),
            "random-walk" | "random_walk" => Ok(Self::RandomWalk),
            other => Err(format!("unknown motion profile `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub name: Option<String>,
    pub length: usize,
    pub profile: MotionProfile,
    pub seed: u64,
    /// Frames per second; timestamps are `i / frame_rate`.
    pub frame_rate: f64,
    /// Nominal travel per frame while moving, meters.
    pub speed: f64,
    pub token_dim: usize,
    pub noise: NoiseParams,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            name: None,
            length: 200,
            profile: MotionProfile::StopAndGo,
            seed: 0,
            frame_rate: 10.0,
            speed: 0.1,
            token_dim: 32,
            noise: NoiseParams::default(),
        }
    }
}

/// A simulated sequence plus everything needed to answer backend requests
/// deterministically.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub name: String,
    pub ground_truth: Trajectory,
    pub token_dim: usize,
    /// `token_dim × 12` feature matrix, row-major.
    pub features: Vec<f64>,
    pub noise: NoiseParams,
    pub seed: u64,
    #[serde(default)]
    pub request_counter: u64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG stream for one `(seed, frame, request)` triple.
fn stream(seed: u64, frame: u64, request: u64) -> ChaCha8Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ frame) ^ request.rotate_left(32));
    ChaCha8Rng::seed_from_u64(key)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

impl SyntheticWorld {
    pub fn len(&self) -> usize {
        self.ground_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground_truth.is_empty()
    }

    pub fn gt_pose(&self, id: u64) -> Option<&Rigid3> {
        self.ground_truth.entries().get(id as usize).map(|(_, p)| p)
    }

    pub fn timestamp(&self, id: u64) -> Option<f64> {
        self.ground_truth.entries().get(id as usize).map(|(t, _)| *t)
    }

    /// Ground-truth poses indexed by frame id.
    pub fn gt_poses(&self) -> Vec<Rigid3> {
        self.ground_truth.poses().copied().collect()
    }

    /// Mean consecutive ground-truth baseline over the requested window order.
    pub fn mean_baseline(&self, ids: &[u64]) -> Result<f64, BackendError> {
        let mut sum = 0.0;
        for w in ids.windows(2) {
            let a = self.gt_pose(w[0]).ok_or(BackendError::UnknownFrame(w[0]))?;
            let b = self.gt_pose(w[1]).ok_or(BackendError::UnknownFrame(w[1]))?;
            sum += (b.translation - a.translation).norm();
        }
        Ok(if ids.len() < 2 {
            0.0
        } else {
            sum / (ids.len() - 1) as f64
        })
    }

    /// Noise-free token for a world pose.
    pub fn clean_token(&self, pose: &Rigid3) -> Vec<f64> {
        let r = pose.rotation_matrix();
        let t = pose.translation;
        let phi = [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.x,
            t.y,
            t.z,
        ];
        self.features
            .chunks_exact(12)
            .map(|row| row.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>().tanh())
            .collect()
    }

    /// Answers one request. Advances the request counter.
    pub fn synthetic_process(
        &mut self,
        request: &BackendRequest,
    ) -> Result<BackendResponse, BackendError> {
        let ids: Vec<u64> = request.ids().collect();
        let Some(&anchor_id) = ids.first() else {
            return Ok(BackendResponse::default());
        };
        let anchor = *self
            .gt_pose(anchor_id)
            .ok_or(BackendError::UnknownFrame(anchor_id))?;
        let sigma = self.noise.sigma(self.mean_baseline(&ids)?);
        let counter = self.request_counter;
        self.request_counter += 1;

        let mut entries = Vec::with_capacity(ids.len());
        for (k, &id) in ids.iter().enumerate() {
            let gt = *self.gt_pose(id).ok_or(BackendError::UnknownFrame(id))?;
            let mut rng = stream(self.seed, id, counter);
            let rel_pose = if k == 0 {
                Rigid3::identity()
            } else {
                let rel = relative_pose(&anchor, &gt);
                if sigma > 0.0 {
                    let dt = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng)) * sigma;
                    let dw = Vector3::new(normal(&mut rng), normal(&mut rng), normal(&mut rng))
                        * (sigma / 10.0);
                    let mut rotation = UnitQuaternion::from_scaled_axis(dw) * rel.rotation;
                    rotation.renormalize();
                    Rigid3::new(rotation, rel.translation + dt)
                } else {
                    rel
                }
            };
            let mut token = self.clean_token(&gt);
            if self.noise.sigma_token > 0.0 {
                for v in &mut token {
                    *v += self.noise.sigma_token * normal(&mut rng);
                }
            }
            entries.push(FrameEstimate {
                id,
                rel_pose,
                token,
            });
        }
        Ok(BackendResponse { entries })
    }
}

impl Backend for SyntheticWorld {
    fn process(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        self.synthetic_process(request)
    }

    fn token_dim(&self) -> Option<usize> {
        Some(self.token_dim)
    }
}

fn heading_pose(position: Vector3<f64>, yaw: f64, pitch: f64, roll: f64) -> Rigid3 {
    Rigid3::new(UnitQuaternion::from_euler_angles(roll, pitch, yaw), position)
}

fn orbit(cfg: &WorldConfig) -> Vec<Rigid3> {
    let n = cfg.length as f64;
    let radius = (cfg.speed * n / TAU).max(0.5);
    (0..cfg.length)
        .map(|i| {
            let theta = TAU * i as f64 / n;
            let p = Vector3::new(radius * theta.cos(), radius * theta.sin(), 0.0);
            // Camera yaw points at the orbit centre.
            heading_pose(p, theta + PI, 0.0, 0.0)
        })
        .collect()
}

fn corridor(cfg: &WorldConfig) -> Vec<Rigid3> {
    (0..cfg.length)
        .map(|i| {
            let s = i as f64 * cfg.speed;
            let p = Vector3::new(s, 0.3 * (s / 2.0).sin(), 0.1 * (s / 3.0).sin());
            let yaw = (0.15 * (s / 2.0).cos()).atan();
            heading_pose(p, yaw, 0.0, 0.02 * s.sin())
        })
        .collect()
}

// Gently curving 3D path parameterized by arc length.
fn curve(s: f64) -> (Vector3<f64>, f64) {
    let radius = 4.0;
    let p = Vector3::new(
        radius * (s / radius).sin(),
        radius * (1.0 - (s / radius).cos()),
        0.4 * (s / 1.5).sin(),
    );
    (p, s / radius)
}

fn stop_and_go(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<Rigid3> {
    let mut poses = Vec::with_capacity(cfg.length);
    let mut s = 0.0;
    let mut moving = true;
    while poses.len() < cfg.length {
        let (len, speed) = if moving {
            (rng.random_range(6..=16), cfg.speed * rng.random_range(0.5..1.5))
        } else {
            (rng.random_range(5..=12), 0.0)
        };
        for _ in 0..len {
            if poses.len() == cfg.length {
                break;
            }
            let (p, yaw) = curve(s);
            poses.push(heading_pose(p, yaw, 0.0, 0.05 * s.sin()));
            s += speed;
        }
        moving = !moving;
    }
    poses
}

fn random_walk(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<Rigid3> {
    let mut p = Vector3::zeros();
    let mut v = Vector3::new(cfg.speed, 0.0, 0.0);
    let mut yaw: f64 = 0.0;
    let mut poses = Vec::with_capacity(cfg.length);
    for _ in 0..cfg.length {
        poses.push(heading_pose(p, yaw, 0.0, 0.0));
        let kick = Vector3::new(normal(rng), normal(rng), 0.3 * normal(rng)) * (0.3 * cfg.speed);
        v = 0.8 * v + kick;
        p += v;
        yaw += 0.05 * normal(rng);
    }
    poses
}

/// Builds a synthetic world. Same config ⇒ identical world.
pub fn generate_world(config: &WorldConfig) -> Result<SyntheticWorld, BackendError> {
    if config.length == 0 {
        return Err(BackendError::BadConfig("length must be at least 1".into()));
    }
    if config.token_dim == 0 {
        return Err(BackendError::BadConfig("token_dim must be at least 1".into()));
    }
    if !(config.frame_rate > 0.0 && config.frame_rate.is_finite()) {
        return Err(BackendError::BadConfig("frame_rate must be positive".into()));
    }
    if !(config.speed >= 0.0 && config.speed.is_finite()) {
        return Err(BackendError::BadConfig("speed must be non-negative".into()));
    }
    config.noise.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed ^ 0x5EED));
    let poses = match config.profile {
        MotionProfile::Orbit => orbit(config),
        MotionProfile::Corridor => corridor(config),
        MotionProfile::StopAndGo => stop_and_go(config, &mut rng),
        MotionProfile::RandomWalk => random_walk(config, &mut rng),
    };
    // Express everything in the first camera's frame, where odometry starts.
    let origin = poses[0];
    let entries = poses
        .into_iter()
        .enumerate()
        .map(|(i, p)| (i as f64 / config.frame_rate, relative_pose(&origin, &p)))
        .collect();
    let ground_truth =
        Trajectory::from_entries(entries).map_err(|e| BackendError::BadConfig(e.to_string()))?;

    let scale = 1.0 / 12f64.sqrt();
    let features = (0..config.token_dim * 12)
        .map(|_| scale * normal(&mut rng))
        .collect();
    Ok(SyntheticWorld {
        name: config
            .name
            .clone()
            .unwrap_or_else(|| format!("world_{:04}", config.seed)),
        ground_truth,
        token_dim: config.token_dim,
        features,
        noise: config.noise,
        seed: config.seed,
        request_counter: 0,
    })
}
