//! Observation / reward ablations and held-out world evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{evaluate_on_world, Decider};
use super::train::{cmd_train, TrainConfig};
use super::{ensure_dir, CommandError, WorldSet};
use crate::agent::Checkpoint;
use crate::backend::{SyntheticWorld, WorldConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    WithoutPose,
    WithoutToken,
    WithoutAlpha,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::WithoutPose,
        Variant::WithoutToken,
        Variant::WithoutAlpha,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutPose => "w/o pose",
            Variant::WithoutToken => "w/o token",
            Variant::WithoutAlpha => "w/o alpha",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::WithoutPose => "without_pose",
            Variant::WithoutToken => "without_token",
            Variant::WithoutAlpha => "without_alpha",
        }
    }

    /// `base` with exactly this variant's toggle applied.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::WithoutPose => cfg.env.toggles.use_pose = false,
            Variant::WithoutToken => cfg.env.toggles.use_tokens = false,
            Variant::WithoutAlpha => cfg.env.reward.lambda2 = 0.0,
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub train: TrainConfig,
    pub eval_worlds: WorldSet,
    /// Backend noise realizations per evaluation world.
    pub runs: usize,
    pub variants: Vec<Variant>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            eval_worlds: WorldSet::generated(WorldConfig::default(), 10, 1000),
            runs: 3,
            variants: Variant::ALL.to_vec(),
        }
    }
}

/// Per-world results for one strategy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorldScore {
    pub world: String,
    pub ates: Vec<f64>,
    pub median_ate: f64,
    pub keyframe_rate: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Noise seed for run `r` on `world`, shared by every strategy so
/// comparisons are paired.
pub fn noise_seed(world: &SyntheticWorld, r: usize) -> u64 {
    world
        .seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(r as u64 + 1)
}

/// Runs `make_decider()` over every world `runs` times.
pub fn score_worlds(
    worlds: &[SyntheticWorld],
    runs: usize,
    window: usize,
    mut make_decider: impl FnMut() -> Decider,
) -> Result<Vec<WorldScore>, CommandError> {
    worlds
        .iter()
        .map(|w| {
            let mut ates = Vec::with_capacity(runs);
            let mut rate = 0.0;
            for r in 0..runs.max(1) {
                let mut decider = make_decider();
                let (ate, kf) = evaluate_on_world(w, &mut decider, window, noise_seed(w, r))?;
                ates.push(ate);
                rate += kf;
            }
            Ok(WorldScore {
                world: w.name.clone(),
                median_ate: median(&ates),
                keyframe_rate: rate / ates.len() as f64,
                ates,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub mean_ate: f64,
    pub keyframe_rate: f64,
}

/// Trains each variant under `out/<variant>/` with identical seeds, then
/// writes `ablation.csv` with one row per variant plus a keep-all row.
pub fn cmd_ablate(cfg: &AblateConfig, out: &Path) -> Result<Vec<AblationRow>, CommandError> {
    if cfg.variants.is_empty() {
        return Err(CommandError::Config("no ablation variants selected".into()));
    }
    let eval_worlds = cfg.eval_worlds.load()?;
    let window = cfg.train.env.window.max(2);
    ensure_dir(out)?;
    let summarize = |label: &str, scores: &[WorldScore]| AblationRow {
        variant: label.to_string(),
        mean_ate: scores.iter().map(|s| s.median_ate).sum::<f64>() / scores.len() as f64,
        keyframe_rate: scores.iter().map(|s| s.keyframe_rate).sum::<f64>() / scores.len() as f64,
    };

    let mut rows = Vec::new();
    for &variant in &cfg.variants {
        let train_cfg = variant.apply(&cfg.train);
        let summary = cmd_train(&train_cfg, &out.join(variant.slug()))?;
        let ckpt = Checkpoint::load(&summary.checkpoint)?;
        let scores = score_worlds(&eval_worlds, cfg.runs, window, || {
            Decider::policy(ckpt.clone(), true, train_cfg.seed)
        })?;
        rows.push(summarize(variant.label(), &scores));
    }
    let sw = score_worlds(&eval_worlds, cfg.runs, window, || Decider::KeepAll)?;
    rows.push(summarize("sw", &sw));

    let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
