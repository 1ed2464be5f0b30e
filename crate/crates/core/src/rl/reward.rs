//! Per-decision reward from aligned translational error.
//!
//! ```text
//! r = λ₁ · max(clip_floor, λ_threshold − e_tran) + λ₂ · α(a)
//! α(Keyframe) = α_keyframe,  α(Discard) = 0
//! ```

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::RlError;
use crate::geometry::{is_degenerate, umeyama_align, Rigid3, Sim3};
use crate::window::{Action, GlobalMap, WindowState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    /// RMSE over every window frame.
    #[default]
    WindowRmse,
    /// Residual of the newest window frame only.
    Newest,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Meters.
    pub threshold: f64,
    pub alpha_keyframe: f64,
    pub clip_floor: f64,
    /// Window poses used to fit the alignment.
    pub align_count: usize,
    pub error_mode: ErrorMode,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 5e-3,
            threshold: 0.2,
            alpha_keyframe: 2.5e-5,
            clip_floor: -1.0,
            align_count: 4,
            error_mode: ErrorMode::WindowRmse,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), RlError> {
        let all = [
            self.lambda1,
            self.lambda2,
            self.threshold,
            self.alpha_keyframe,
            self.clip_floor,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(RlError::BadConfig("reward parameters must be finite".into()));
        }
        if self.threshold <= 0.0 {
            return Err(RlError::BadConfig("reward threshold must be positive".into()));
        }
        if self.align_count < 3 {
            return Err(RlError::BadConfig("align_count must be at least 3".into()));
        }
        Ok(())
    }

    /// Upper and lower reward bounds over all inputs.
    pub fn bounds(&self) -> (f64, f64) {
        let bonus = self.lambda2 * self.alpha_keyframe;
        let lo = self.lambda1 * self.clip_floor + bonus.min(0.0);
        let hi = self.lambda1 * self.threshold + bonus.max(0.0);
        (lo, hi)
    }
}

pub fn reward_from_error(e_tran: f64, action: Action, params: &RewardParams) -> f64 {
    let alpha = match action {
        Action::Keyframe => params.alpha_keyframe,
        Action::Discard => 0.0,
    };
    params.lambda1 * params.clip_floor.max(params.threshold - e_tran) + params.lambda2 * alpha
}

/// Which point set the alignment was fitted on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentUsed {
    FirstK,
    AllWindow,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardOutcome {
    pub reward: f64,
    pub e_tran: f64,
    pub alignment: AlignmentUsed,
}

fn fit(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Option<Sim3> {
    // A stationary target would let the scale collapse to zero and hide any error.
    if is_degenerate(est) || is_degenerate(gt) {
        return None;
    }
    umeyama_align(est, gt, true).ok()
}

/// Aligned translational error over matched window positions.
pub fn translation_error(
    est: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    params: &RewardParams,
) -> (f64, AlignmentUsed) {
    let k = params.align_count.min(est.len());
    let (transform, used) = match fit(&est[..k], &gt[..k]) {
        Some(s) => (s, AlignmentUsed::FirstK),
        None => match fit(est, gt) {
            Some(s) => (s, AlignmentUsed::AllWindow),
            None => (Sim3::identity(), AlignmentUsed::None),
        },
    };
    let residual = |i: usize| (transform.transform_point(&est[i]) - gt[i]).norm();
    let e = match params.error_mode {
        ErrorMode::WindowRmse => {
            let sq: f64 = (0..est.len()).map(|i| residual(i).powi(2)).sum();
            (sq / est.len().max(1) as f64).sqrt()
        }
        ErrorMode::Newest => est.len().checked_sub(1).map_or(0.0, residual),
    };
    (e, used)
}

/// Reward for `action`, evaluated on the window as it stands after the action.
pub fn compute_reward(
    window: &WindowState,
    map: &GlobalMap,
    ground_truth: &dyn Fn(u64) -> Option<Rigid3>,
    action: Action,
    params: &RewardParams,
) -> Result<RewardOutcome, RlError> {
    let mut est = Vec::with_capacity(window.len());
    let mut gt = Vec::with_capacity(window.len());
    for f in window.frames() {
        let g = ground_truth(f.id).ok_or(RlError::MissingGroundTruth(f.id))?;
        let e = map.resolve(f.id).ok_or(RlError::MissingEstimate(f.id))?;
        est.push(e.translation);
        gt.push(g.translation);
    }
    let (e_tran, alignment) = translation_error(&est, &gt, params);
    if alignment == AlignmentUsed::None {
        log::debug!("reward alignment degenerate; using unaligned error {e_tran:.4}");
    }
    Ok(RewardOutcome {
        reward: reward_from_error(e_tran, action, params),
        e_tran,
        alignment,
    })
}
