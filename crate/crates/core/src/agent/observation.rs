//! Observation vectors for the actor and the privileged critic.
//!
//! Actor input: `[mean token (D) | per-frame pose relative to the newest
//! frame (6W)]`. Pose blocks are translation then rotation vector, in window
//! order, normalized by a running mean/std. Tokens pass through raw.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::backend::BackendResponse;
use crate::geometry::{relative_pose, umeyama_align, Rigid3};
use crate::window::{GlobalMap, WindowState};

pub const POSE_FEATURES: usize = 6;
pub const DEFAULT_PRIVILEGED_HORIZON: usize = 4;
const MIN_STD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationLayout {
    pub token_dim: usize,
    pub window: usize,
}

impl ObservationLayout {
    pub fn new(token_dim: usize, window: usize) -> Self {
        Self { token_dim, window }
    }

    pub fn pose_len(&self) -> usize {
        POSE_FEATURES * self.window
    }

    pub fn len(&self) -> usize {
        self.token_dim + self.pose_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of the privileged critic input for a given future horizon.
    pub fn privileged_len(&self, horizon: usize) -> usize {
        self.len() + self.window + horizon
    }
}

/// Which observation blocks are fed to the networks (ablation switches).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationToggles {
    pub use_tokens: bool,
    pub use_pose: bool,
}

impl Default for ObservationToggles {
    fn default() -> Self {
        Self {
            use_tokens: true,
            use_pose: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationVec(pub Vec<f64>);

impl ObservationVec {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn token_block(&self, layout: &ObservationLayout) -> &[f64] {
        &self.0[..layout.token_dim]
    }

    pub fn pose_block(&self, layout: &ObservationLayout) -> &[f64] {
        &self.0[layout.token_dim..layout.len()]
    }
}

/// Welford running mean and (population) variance per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Ingest the sample before normalizing it (training).
    Update,
    /// Use the statistics as they are (evaluation).
    Frozen,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn var(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|s| (s / self.count as f64).max(0.0)).collect()
    }

    pub fn normalize_into(&self, x: &mut [f64]) {
        if self.count == 0 {
            return;
        }
        let n = self.count as f64;
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.m2) {
            let std = (s / n).max(0.0).sqrt().max(MIN_STD);
            *v = (*v - m) / std;
        }
    }

    /// Combines statistics of two disjoint sample sets (Chan et al.).
    pub fn merge(&mut self, other: &RunningNorm) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }
}

/// Translation + rotation vector of `pose`.
pub fn pose_features(pose: &Rigid3) -> [f64; 6] {
    let t = pose.translation;
    let w = pose.rotation_vector();
    [t.x, t.y, t.z, w.x, w.y, w.z]
}

/// Raw (unnormalized) pose block: every window frame relative to the newest.
pub fn raw_pose_block(
    window: &WindowState,
    response: &BackendResponse,
    layout: &ObservationLayout,
) -> Result<Vec<f64>, AgentError> {
    let newest = window.newest().ok_or(AgentError::EmptyWindow)?;
    let rel_newest = response
        .get(newest.id)
        .ok_or(AgentError::MissingEstimate(newest.id))?
        .rel_pose;
    let mut block = vec![0.0; layout.pose_len()];
    if window.len() > layout.window {
        return Err(AgentError::DimensionMismatch {
            expected: layout.window,
            got: window.len(),
        });
    }
    for (k, f) in window.frames().enumerate() {
        let rel = response.get(f.id).ok_or(AgentError::MissingEstimate(f.id))?;
        let feats = if f.id == newest.id {
            [0.0; 6]
        } else {
            pose_features(&relative_pose(&rel_newest, &rel.rel_pose))
        };
        block[k * POSE_FEATURES..(k + 1) * POSE_FEATURES].copy_from_slice(&feats);
    }
    Ok(block)
}

/// Builds the actor observation for the window and its latest response.
pub fn build_observation(
    window: &WindowState,
    response: &BackendResponse,
    norm: &mut RunningNorm,
    mode: NormMode,
    toggles: ObservationToggles,
    layout: &ObservationLayout,
) -> Result<ObservationVec, AgentError> {
    if norm.dim() != layout.pose_len() {
        return Err(AgentError::DimensionMismatch {
            expected: layout.pose_len(),
            got: norm.dim(),
        });
    }
    let mut out = Vec::with_capacity(layout.len());

    let mut mean_token = vec![0.0; layout.token_dim];
    let mut n = 0usize;
    for f in window.frames() {
        let e = response.get(f.id).ok_or(AgentError::MissingEstimate(f.id))?;
        if e.token.len() != layout.token_dim {
            return Err(AgentError::DimensionMismatch {
                expected: layout.token_dim,
                got: e.token.len(),
            });
        }
        for (m, v) in mean_token.iter_mut().zip(&e.token) {
            *m += v;
        }
        n += 1;
    }
    if n > 0 {
        mean_token.iter_mut().for_each(|m| *m /= n as f64);
    }
    if !toggles.use_tokens {
        mean_token.iter_mut().for_each(|m| *m = 0.0);
    }
    out.extend_from_slice(&mean_token);

    let mut pose = raw_pose_block(window, response, layout)?;
    if mode == NormMode::Update {
        norm.update(&pose);
    }
    norm.normalize_into(&mut pose);
    if !toggles.use_pose {
        pose.iter_mut().for_each(|v| *v = 0.0);
    }
    out.extend_from_slice(&pose);

    if out.iter().any(|v| !v.is_finite()) {
        return Err(AgentError::NonFinite);
    }
    Ok(ObservationVec(out))
}

/// Appends training-only features for the critic: per-frame translational
/// error of the window after Sim(3) alignment to ground truth, and the next
/// `future_baselines.len()` ground-truth inter-frame baselines.
///
/// `ground_truth(id)` returns the ground-truth pose of a frame.
pub fn privileged_observation(
    base: &ObservationVec,
    window: &WindowState,
    map: &GlobalMap,
    ground_truth: &dyn Fn(u64) -> Option<Rigid3>,
    horizon: usize,
    layout: &ObservationLayout,
) -> Result<Vec<f64>, AgentError> {
    let mut est = Vec::with_capacity(window.len());
    let mut gt = Vec::with_capacity(window.len());
    for f in window.frames() {
        let g = ground_truth(f.id).ok_or(AgentError::MissingGroundTruth(f.id))?;
        let e = map.resolve(f.id).ok_or(AgentError::MissingEstimate(f.id))?;
        est.push(e.translation);
        gt.push(g.translation);
    }
    let errors = aligned_errors(&est, &gt);

    let mut out = base.0.clone();
    let mut block = vec![0.0; layout.window];
    block[..errors.len().min(layout.window)]
        .copy_from_slice(&errors[..errors.len().min(layout.window)]);
    out.extend_from_slice(&block);

    let newest = window.newest().ok_or(AgentError::EmptyWindow)?.id;
    for i in 0..horizon as u64 {
        let a = ground_truth(newest + i);
        let b = ground_truth(newest + i + 1);
        let baseline = match (a, b) {
            (Some(a), Some(b)) => (b.translation - a.translation).norm(),
            _ => 0.0,
        };
        out.push(baseline);
    }
    Ok(out)
}

/// Per-point residuals after Sim(3) alignment; falls back to matching
/// centroids when the point spread is degenerate.
pub(crate) fn aligned_errors(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Vec<f64> {
    match umeyama_align(est, gt, true) {
        Ok(g) => est
            .iter()
            .zip(gt)
            .map(|(e, t)| (g.transform_point(e) - t).norm())
            .collect(),
        Err(_) => {
            let n = est.len().max(1) as f64;
            let ce = est.iter().sum::<Vector3<f64>>() / n;
            let cg = gt.iter().sum::<Vector3<f64>>() / n;
            est.iter()
                .zip(gt)
                .map(|(e, t)| ((e - ce) - (t - cg)).norm())
                .collect()
        }
    }
}
