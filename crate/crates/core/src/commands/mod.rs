//! Drivers behind the `generate`, `train`, `run`, `eval` and `ablate`
//! subcommands. Each takes a JSON-deserializable config and an output
//! directory, and distinguishes configuration errors from runtime failures.

pub mod ablate;
pub mod eval;
pub mod generate;
pub mod run;
pub mod train;

use std::fmt::Display;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;
use crate::backend::{generate_world, BackendError, SyntheticWorld, WorldConfig};
use crate::rl::RlError;
use crate::trajectory_io::TrajectoryIoError;

pub use ablate::{cmd_ablate, median, noise_seed, score_worlds, AblateConfig, AblationRow, Variant, WorldScore};
pub use eval::{cmd_eval, EvalConfig, EvalEntry, EvalRow, EvalTable};
pub use generate::{cmd_generate, GenerateConfig};
pub use run::{
    cmd_run, evaluate_on_world, frames_for_world, run_sequence, BackendConfig, DecisionRecord,
    Decider, RunConfig, RunOutcome, RunReport, StrategyConfig,
};
pub use train::{cmd_train, TrainConfig, TrainSummary};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CommandError {
    pub fn config(e: impl Display) -> Self {
        Self::Config(e.to_string())
    }

    pub fn runtime(e: impl Display) -> Self {
        Self::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }
}

impl From<RlError> for CommandError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::BadConfig(m) => Self::Config(m),
            RlError::Backend(BackendError::BadConfig(m)) => Self::Config(m),
            other => Self::runtime(other),
        }
    }
}

impl From<BackendError> for CommandError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::BadConfig(m) => Self::Config(m),
            other => Self::runtime(other),
        }
    }
}

impl From<TrajectoryIoError> for CommandError {
    fn from(e: TrajectoryIoError) -> Self {
        Self::runtime(e)
    }
}

impl From<AgentError> for CommandError {
    fn from(e: AgentError) -> Self {
        Self::runtime(e)
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}

impl From<csv::Error> for CommandError {
    fn from(e: csv::Error) -> Self {
        Self::runtime(e)
    }
}

/// Reads a JSON config; `None` yields the defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CommandError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CommandError> {
    let text = serde_json::to_string_pretty(value).map_err(CommandError::runtime)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<(), CommandError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CommandError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Worlds either loaded from JSON files or generated from a template with
/// consecutive seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSet {
    pub template: WorldConfig,
    pub count: usize,
    pub first_seed: u64,
    /// When non-empty, these world files are used instead of the template.
    pub files: Vec<PathBuf>,
}

impl Default for WorldSet {
    fn default() -> Self {
        Self {
            template: WorldConfig::default(),
            count: 1,
            first_seed: 0,
            files: Vec::new(),
        }
    }
}

impl WorldSet {
    pub fn generated(template: WorldConfig, count: usize, first_seed: u64) -> Self {
        Self {
            template,
            count,
            first_seed,
            files: Vec::new(),
        }
    }

    pub fn load(&self) -> Result<Vec<SyntheticWorld>, CommandError> {
        if !self.files.is_empty() {
            return self.files.iter().map(|p| read_world(p)).collect();
        }
        if self.count == 0 {
            return Err(CommandError::Config("world count must be at least 1".into()));
        }
        (0..self.count as u64)
            .map(|i| {
                let cfg = WorldConfig {
                    seed: self.first_seed + i,
                    name: self.template.name.as_ref().map(|n| format!("{n}_{i:03}")),
                    ..self.template.clone()
                };
                generate_world(&cfg).map_err(CommandError::from)
            })
            .collect()
    }
}

pub fn read_world(path: &Path) -> Result<SyntheticWorld, CommandError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CommandError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CommandError::Config(format!("{}: not a world file: {e}", path.display())))
}
