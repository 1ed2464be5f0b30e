//! PPO training of the keyframe agent on synthetic worlds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ensure_dir, write_json, CommandError, WorldSet};
use crate::agent::checkpoint::CHECKPOINT_VERSION;
use crate::agent::policy::DEFAULT_HIDDEN;
use crate::agent::{config_hash, Checkpoint, ObservationLayout};
use crate::backend::WorldConfig;
use crate::rl::{KeyframeEnv, KeyframeEnvConfig, PpoConfig, RlError, Trainer, UpdateRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    /// Window size, observation toggles, privileged horizon and reward.
    /// Its `frame_drop_prob` is replaced by `ppo.frame_drop_prob`.
    pub env: KeyframeEnvConfig,
    pub hidden: usize,
    pub seed: u64,
    /// Training worlds, assigned to environments round-robin.
    pub worlds: WorldSet,
    /// Checkpoint to continue from; its step counter carries over.
    pub resume: Option<PathBuf>,
    /// Save an intermediate checkpoint every this many updates (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            env: KeyframeEnvConfig::default(),
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            worlds: WorldSet::generated(WorldConfig::default(), 20, 0),
            resume: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub records: Vec<UpdateRecord>,
    pub final_step: u64,
}

fn snapshot(
    trainer: &Trainer<KeyframeEnv>,
    cfg: &TrainConfig,
    layout: ObservationLayout,
    hash: &str,
) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: hash.to_string(),
        step: trainer.step,
        layout,
        toggles: cfg.env.toggles,
        privileged_horizon: cfg.env.privileged_horizon,
        params: trainer.params.clone(),
        norm: trainer
            .norm
            .clone()
            .expect("keyframe environments carry a normalizer"),
        optimizer: Some(trainer.adam.clone()),
    }
}

/// Writes `checkpoint.json` and `metrics.csv` (one row per update) to `out`.
pub fn cmd_train(cfg: &TrainConfig, out: &Path) -> Result<TrainSummary, CommandError> {
    cfg.ppo.validate()?;
    let worlds = cfg.worlds.load()?;
    if worlds.len() > cfg.ppo.n_envs {
        log::warn!("{} worlds but {} environments; the rest are unused", worlds.len(), cfg.ppo.n_envs);
    }
    let env_cfg = KeyframeEnvConfig {
        frame_drop_prob: cfg.ppo.frame_drop_prob,
        ..cfg.env.clone()
    };
    let envs = (0..cfg.ppo.n_envs)
        .map(|i| KeyframeEnv::new(worlds[i % worlds.len()].clone(), env_cfg.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let layout = envs[0].layout();
    if envs.iter().any(|e| e.layout() != layout) {
        return Err(CommandError::Config("training worlds disagree on token dimension".into()));
    }
    let mut trainer = Trainer::new(cfg.ppo.clone(), envs, cfg.hidden, cfg.seed)?;
    if let Some(path) = &cfg.resume {
        let ckpt = Checkpoint::load(path).map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))?;
        if ckpt.layout != layout || ckpt.params.hidden() != cfg.hidden {
            return Err(CommandError::Config("resume checkpoint does not match the config".into()));
        }
        trainer.resume(ckpt.params, Some(ckpt.norm), ckpt.optimizer, ckpt.step, cfg.seed)?;
    }

    ensure_dir(out)?;
    let hash = config_hash(cfg);
    let metrics = out.join("metrics.csv");
    let mut writer = csv::Writer::from_path(&metrics)?;
    let result = trainer.train(|record, t| {
        writer
            .serialize(record)
            .and_then(|_| writer.flush().map_err(csv::Error::from))
            .map_err(|e| RlError::Aborted(format!("metrics log: {e}")))?;
        log::info!(
            "update {} step {} reward {:.5} keyframe rate {:.3} entropy {:.3}",
            record.update,
            record.step,
            record.mean_reward,
            record.keyframe_rate,
            record.entropy
        );
        if cfg.checkpoint_every > 0 && t.updates % cfg.checkpoint_every == 0 {
            let path = out.join(format!("checkpoint_{:08}.json", t.step));
            snapshot(t, cfg, layout, &hash)
                .save(&path)
                .map_err(|e| RlError::Aborted(format!("checkpoint: {e}")))?;
        }
        Ok(())
    });
    let records = match result {
        Ok(r) => r,
        Err(RlError::NonFiniteLoss(dump)) => {
            let path = out.join("nonfinite_minibatch.json");
            write_json(&path, &dump)?;
            return Err(CommandError::Runtime(format!(
                "non-finite loss; offending minibatch written to {}",
                path.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let checkpoint = out.join("checkpoint.json");
    snapshot(&trainer, cfg, layout, &hash).save(&checkpoint)?;
    Ok(TrainSummary {
        checkpoint,
        metrics,
        records,
        final_step: trainer.step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke(total: u64) -> TrainConfig {
        TrainConfig {
            ppo: PpoConfig {
                n_envs: 2,
                rollout_len: 256,
                total_steps: total,
                epochs: 2,
                ..PpoConfig::default()
            },
            hidden: 16,
            worlds: WorldSet::generated(
                WorldConfig {
                    length: 60,
                    ..WorldConfig::default()
                },
                2,
                0,
            ),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn smoke_run_writes_checkpoint_and_one_row_per_update() {
        let dir = tempfile::tempdir().unwrap();
        let summary = cmd_train(&smoke(1000), dir.path()).unwrap();
        assert_eq!(summary.records.len(), 2);
        assert_eq!(summary.final_step, 1024);
        let rows = std::fs::read_to_string(&summary.metrics).unwrap().lines().count();
        assert_eq!(rows, 1 + summary.records.len());
        let ckpt = Checkpoint::load(&summary.checkpoint).unwrap();
        assert_eq!(ckpt.step, 1024);
        assert_eq!(ckpt.config_hash, config_hash(&smoke(1000)));
    }

    #[test]
    fn resume_continues_step_counter() {
        let dir = tempfile::tempdir().unwrap();
        let first = cmd_train(&smoke(512), &dir.path().join("a")).unwrap();
        let cfg = TrainConfig {
            resume: Some(first.checkpoint),
            ..smoke(1024)
        };
        let second = cmd_train(&cfg, &dir.path().join("b")).unwrap();
        assert_eq!(second.records.len(), 1);
        assert_eq!(second.records[0].step, 1024);
        assert_eq!(Checkpoint::load(&second.checkpoint).unwrap().step, 1024);
    }

    #[test]
    fn invalid_ppo_config_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke(100);
        cfg.ppo.gamma = 2.0;
        assert_eq!(cmd_train(&cfg, dir.path()).unwrap_err().exit_code(), 2);
    }
}
