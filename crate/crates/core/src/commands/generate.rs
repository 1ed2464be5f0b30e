//! Synthetic world generation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ensure_dir, write_json, CommandError};
use crate::backend::{generate_world, WorldConfig};
use crate::trajectory_io::{write_trajectory_file, PoseFormat};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub world: WorldConfig,
    /// Worlds to generate with seeds `world.seed, world.seed + 1, ...`;
    /// 0 is treated as 1.
    pub count: usize,
}

/// Writes `<name>.json` (the full world) and `<name>.tum` (its ground truth)
/// per world. Returns the JSON paths.
pub fn cmd_generate(cfg: &GenerateConfig, out: &Path) -> Result<Vec<PathBuf>, CommandError> {
    let count = cfg.count.max(1);
    let mut worlds = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let wc = WorldConfig {
            seed: cfg.world.seed + i,
            name: match (&cfg.world.name, count) {
                (Some(n), 1) => Some(n.clone()),
                (Some(n), _) => Some(format!("{n}_{i:03}")),
                (None, _) => None,
            },
            ..cfg.world.clone()
        };
        worlds.push(generate_world(&wc)?);
    }
    ensure_dir(out)?;
    let mut paths = Vec::with_capacity(count);
    for world in &worlds {
        let json = out.join(format!("{}.json", world.name));
        write_json(&json, world)?;
        write_trajectory_file(
            &out.join(format!("{}.tum", world.name)),
            &world.ground_truth,
            PoseFormat::Tum,
        )?;
        paths.push(json);
    }
    Ok(paths)
}
