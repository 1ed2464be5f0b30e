//! ATE tables over estimate / ground-truth file pairs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ensure_dir, CommandError};
use crate::geometry::{evaluate_ate, Alignment, DEFAULT_ASSOCIATION_TOLERANCE};
use crate::trajectory_io::{read_trajectory, PoseFormat};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEntry {
    /// Row label; defaults to the estimate's file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub estimate: PathBuf,
    pub ground_truth: PathBuf,
    #[serde(default)]
    pub format: PoseFormat,
    /// Ground-truth format when it differs from `format`.
    #[serde(default)]
    pub ground_truth_format: Option<PoseFormat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub sequences: Vec<EvalEntry>,
    pub alignment: Alignment,
    /// Seconds.
    pub tolerance: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sequences: Vec::new(),
            alignment: Alignment::Sim3,
            tolerance: DEFAULT_ASSOCIATION_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub sequence: String,
    pub ate_rmse: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
    pub average: f64,
}

impl EvalTable {
    /// Fixed-width text rendering with three decimals, average last.
    pub fn render(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.sequence.len())
            .chain(["average".len()])
            .max()
            .unwrap_or(8);
        let mut s = format!("{:<width$}  ATE (m)\n", "sequence");
        for r in &self.rows {
            s.push_str(&format!("{:<width$}  {:.3}\n", r.sequence, r.ate_rmse));
        }
        s.push_str(&format!("{:<width$}  {:.3}\n", "average", self.average));
        s
    }
}

/// Writes `ate.csv` (per-sequence rows plus an `average` row) and one
/// `plot_<sequence>.csv` of aligned positions per sequence.
pub fn cmd_eval(cfg: &EvalConfig, out: &Path) -> Result<EvalTable, CommandError> {
    if cfg.sequences.is_empty() {
        return Err(CommandError::Config("no sequences to evaluate".into()));
    }
    if !(cfg.tolerance > 0.0) {
        return Err(CommandError::Config("tolerance must be positive".into()));
    }
    ensure_dir(out)?;
    let mut rows = Vec::with_capacity(cfg.sequences.len());
    for entry in &cfg.sequences {
        let name = entry.name.clone().unwrap_or_else(|| {
            entry
                .estimate
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sequence".into())
        });
        let read = |p: &Path, f: PoseFormat| {
            read_trajectory(p, f)
                .map_err(|e| CommandError::Runtime(format!("{}: {e}", p.display())))
        };
        let est = read(&entry.estimate, entry.format)?;
        let gt = read(
            &entry.ground_truth,
            entry.ground_truth_format.unwrap_or(entry.format),
        )?;
        let report = evaluate_ate(&est, &gt, cfg.alignment, cfg.tolerance)
            .map_err(|e| CommandError::Runtime(format!("{name}: {e}")))?;

        let mut plot = csv::Writer::from_path(out.join(format!("plot_{name}.csv")))?;
        plot.write_record(["t", "est_x", "est_y", "est_z", "gt_x", "gt_y", "gt_z"])?;
        for (t, e, g) in &report.aligned {
            plot.write_record(
                [*t, e.x, e.y, e.z, g.x, g.y, g.z].map(|v| format!("{v:.9}")),
            )?;
        }
        plot.flush()?;
        rows.push(EvalRow {
            sequence: name,
            ate_rmse: report.rmse,
            pairs: report.pairs.len(),
        });
    }
    let average = rows.iter().map(|r| r.ate_rmse).sum::<f64>() / rows.len() as f64;

    let mut w = csv::Writer::from_path(out.join("ate.csv"))?;
    w.write_record(["sequence", "ate_rmse", "pairs"])?;
    for r in &rows {
        w.write_record([r.sequence.clone(), format!("{:.6}", r.ate_rmse), r.pairs.to_string()])?;
    }
    let total_pairs: usize = rows.iter().map(|r| r.pairs).sum();
    w.write_record(["average".to_string(), format!("{average:.6}"), total_pairs.to_string()])?;
    w.flush()?;
    Ok(EvalTable { rows, average })
}
