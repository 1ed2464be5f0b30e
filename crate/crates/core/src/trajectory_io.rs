//! TUM and KITTI pose files, plus JSON sequence manifests.
//!
//! TUM lines are `t tx ty tz qx qy qz qw`; KITTI lines are the 12 entries
//! of a row-major 3x4 `[R | t]` matrix with the line index as timestamp.
//! Writers emit fixed 9-digit decimals separated by single spaces.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{nearest_rotation, Rigid3, Trajectory};

/// Acceptance gate for quaternion norm and rotation orthonormality on ingest.
const INGEST_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum TrajectoryIoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: timestamp is not strictly increasing")]
    NonMonotonic { line: usize },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TrajectoryIoError {
    /// One-based line number of a positioned error.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Parse { line, .. } | Self::NonMonotonic { line } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseFormat {
    #[default]
    Tum,
    Kitti,
}

impl std::str::FromStr for PoseFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tum" => Ok(Self::Tum),
            "kitti" => Ok(Self::Kitti),
            other => Err(format!("unknown pose format `{other}`")),
        }
    }
}

fn parse_fields(line: &str, lineno: usize, expected: usize) -> Result<Vec<f64>, TrajectoryIoError> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() != expected {
        return Err(TrajectoryIoError::Parse {
            line: lineno,
            message: format!("expected {expected} fields, found {}", tokens.len()),
        });
    }
    tokens
        .iter()
        .map(|tok| {
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| TrajectoryIoError::Parse {
                    line: lineno,
                    message: format!("invalid number `{tok}`"),
                })
        })
        .collect()
}

/// Parses a TUM trajectory. `#` comment lines and blank lines are skipped.
pub fn parse_tum<R: BufRead>(reader: R) -> Result<Trajectory, TrajectoryIoError> {
    let mut traj = Trajectory::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let v = parse_fields(trimmed, lineno, 8)?;
        let q = [v[4], v[5], v[6], v[7]];
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > INGEST_TOLERANCE {
            return Err(TrajectoryIoError::Parse {
                line: lineno,
                message: format!("quaternion norm {norm} is not close to 1"),
            });
        }
        let pose = Rigid3::from_quaternion_xyzw(q, Vector3::new(v[1], v[2], v[3]));
        traj.push(v[0], pose)
            .map_err(|_| TrajectoryIoError::NonMonotonic { line: lineno })?;
    }
    Ok(traj)
}

pub fn parse_tum_str(text: &str) -> Result<Trajectory, TrajectoryIoError> {
    parse_tum(text.as_bytes())
}

/// Parses a KITTI odometry pose file. Timestamps are the zero-based row index.
pub fn parse_kitti<R: BufRead>(reader: R) -> Result<Trajectory, TrajectoryIoError> {
    let mut traj = Trajectory::new();
    let mut row = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v = parse_fields(trimmed, lineno, 12)?;
        let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let ortho_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho_err > INGEST_TOLERANCE || r.determinant() <= 0.0 {
            return Err(TrajectoryIoError::Parse {
                line: lineno,
                message: format!("rotation block is not orthonormal (error {ortho_err:.2e})"),
            });
        }
        let pose = Rigid3::from_matrix_parts(&nearest_rotation(&r), Vector3::new(v[3], v[7], v[11]));
        traj.push(row as f64, pose)
            .map_err(|_| TrajectoryIoError::NonMonotonic { line: lineno })?;
        row += 1;
    }
    Ok(traj)
}

pub fn parse_kitti_str(text: &str) -> Result<Trajectory, TrajectoryIoError> {
    parse_kitti(text.as_bytes())
}

pub fn parse_trajectory<R: BufRead>(
    reader: R,
    format: PoseFormat,
) -> Result<Trajectory, TrajectoryIoError> {
    match format {
        PoseFormat::Tum => parse_tum(reader),
        PoseFormat::Kitti => parse_kitti(reader),
    }
}

pub fn read_trajectory(path: &Path, format: PoseFormat) -> Result<Trajectory, TrajectoryIoError> {
    let file = std::fs::File::open(path)?;
    parse_trajectory(std::io::BufReader::new(file), format)
}

pub fn write_trajectory_file(
    path: &Path,
    trajectory: &Trajectory,
    format: PoseFormat,
) -> Result<(), TrajectoryIoError> {
    let text = match format {
        PoseFormat::Tum => write_tum(trajectory),
        PoseFormat::Kitti => write_kitti(trajectory),
    };
    std::fs::write(path, text)?;
    Ok(())
}

// Avoids "-0.000000000" so output is bit-stable across sign-of-zero noise.
fn push_num(out: &mut String, v: f64) {
    let v = if v == 0.0 { 0.0 } else { v };
    let s = format!("{v:.9}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        out.push_str(&s[1..]);
    } else {
        out.push_str(&s);
    }
}

fn push_line(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        push_num(out, *v);
    }
    out.push('\n');
}

pub fn write_tum(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for (t, pose) in trajectory.iter() {
        let q = pose.quaternion_xyzw();
        let p = pose.translation;
        push_line(&mut out, &[*t, p.x, p.y, p.z, q[0], q[1], q[2], q[3]]);
    }
    out
}

pub fn write_kitti(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for (_, pose) in trajectory.iter() {
        let r = pose.rotation_matrix();
        let p = pose.translation;
        let mut row = [0.0; 12];
        for i in 0..3 {
            row[4 * i] = r[(i, 0)];
            row[4 * i + 1] = r[(i, 1)];
            row[4 * i + 2] = r[(i, 2)];
            row[4 * i + 3] = p[i];
        }
        push_line(&mut out, &row);
    }
    out
}

/// On-disk manifest describing one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub name: String,
    pub frames: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_format: Option<PoseFormat>,
}

impl SequenceManifest {
    pub fn validate(&self) -> Result<(), TrajectoryIoError> {
        if self.frames.is_empty() {
            return Err(TrajectoryIoError::Manifest(format!(
                "sequence `{}` lists no frames",
                self.name
            )));
        }
        let mut seen = HashSet::new();
        for f in &self.frames {
            if !seen.insert(f.as_str()) {
                return Err(TrajectoryIoError::Manifest(format!("duplicate frame `{f}`")));
            }
        }
        Ok(())
    }
}

/// A manifest with its ground truth loaded.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub manifest: SequenceManifest,
    pub ground_truth: Option<Trajectory>,
    /// Directory the manifest was loaded from; relative frame paths resolve here.
    pub base_dir: PathBuf,
}

impl Sequence {
    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    /// Frame references resolved against the manifest directory.
    pub fn frame_paths(&self) -> Vec<String> {
        self.manifest
            .frames
            .iter()
            .map(|f| {
                let p = Path::new(f);
                if p.is_absolute() {
                    f.clone()
                } else {
                    self.base_dir.join(p).to_string_lossy().into_owned()
                }
            })
            .collect()
    }
}

pub fn parse_manifest(text: &str) -> Result<SequenceManifest, TrajectoryIoError> {
    let manifest: SequenceManifest = serde_json::from_str(text)?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Sequence, TrajectoryIoError> {
    let manifest = parse_manifest(&std::fs::read_to_string(path)?)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let ground_truth = match &manifest.ground_truth_file {
        Some(file) => {
            let format = manifest.ground_truth_format.unwrap_or_default();
            Some(read_trajectory(&base_dir.join(file), format)?)
        }
        None => None,
    };
    Ok(Sequence {
        manifest,
        ground_truth,
        base_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn tum_single_identity() {
        let t = parse_tum_str("0.0 0 0 0 0 0 0 1").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.entries()[0].0, 0.0);
        assert!(t.entries()[0].1.max_abs_diff(&Rigid3::identity()) < 1e-15);
    }

    #[test]
    fn tum_comments_and_blank_lines() {
        let text = "# timestamp tx ty tz qx qy qz qw\n\n0.0 0 0 0 0 0 0 1\n# mid\n0.1 1 2 3 0 0 0 1\n";
        let t = parse_tum_str(text).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.entries()[1].1.translation, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn tum_errors_are_positioned() {
        let err = parse_tum_str("0.0 0 0 0").unwrap_err();
        assert!(matches!(err, TrajectoryIoError::Parse { line: 1, .. }));

        let err = parse_tum_str("# c\n0.0 0 0 0 0 0 0 1\n0.1 0 0 x 0 0 0 1\n").unwrap_err();
        assert_eq!(err.line(), Some(3));

        let err = parse_tum_str("1.0 0 0 0 0 0 0 1\n0.5 0 0 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, TrajectoryIoError::NonMonotonic { line: 2 }));

        let err = parse_tum_str("0.0 0 0 0 0 0 0 2").unwrap_err();
        assert_eq!(err.line(), Some(1));
    }

    #[test]
    fn tum_renormalizes_small_quaternion_noise() {
        let t = parse_tum_str("0.0 0 0 0 0 0 0 1.0004").unwrap();
        let q = t.entries()[0].1.rotation.quaternion();
        assert!((q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kitti_identity_and_translation() {
        let t = parse_kitti_str("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 4 0 1 0 5 0 0 1 6\n").unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.entries()[0].1.max_abs_diff(&Rigid3::identity()) < 1e-15);
        assert_eq!(t.entries()[1].0, 1.0);
        let p = &t.entries()[1].1;
        assert!(p.rotation.angle() < 1e-15);
        assert_eq!(p.translation, Vector3::new(4.0, 5.0, 6.0));
    }

    #[test]
    fn kitti_rotation_matches_matrix() {
        // 90 degrees about z.
        let t = parse_kitti_str("0 -1 0 0 1 0 0 0 0 0 1 0").unwrap();
        let expected = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        assert!(t.entries()[0].1.rotation.angle_to(&expected) < 1e-12);
    }

    #[test]
    fn kitti_errors() {
        let err = parse_kitti_str("1 0 0 0 0 1 0 0 0 0 1").unwrap_err();
        assert!(matches!(err, TrajectoryIoError::Parse { line: 1, .. }));
        let err = parse_kitti_str("1 0 0 0 0 1 0 0 0 0 1 0\n2 0 0 0 0 1 0 0 0 0 1 0\n").unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn writers_are_fixed_notation() {
        let mut t = Trajectory::new();
        t.push(0.0, Rigid3::identity()).unwrap();
        assert_eq!(
            write_tum(&t),
            "0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 0.000000000 1.000000000\n"
        );
        assert_eq!(
            write_kitti(&t),
            "1.000000000 0.000000000 0.000000000 0.000000000 0.000000000 1.000000000 0.000000000 0.000000000 0.000000000 0.000000000 1.000000000 0.000000000\n"
        );
        assert_eq!(write_tum(&Trajectory::new()), "");
        assert_eq!(write_kitti(&Trajectory::new()), "");
    }

    #[test]
    fn negative_zero_is_not_written() {
        let mut t = Trajectory::new();
        t.push(0.0, Rigid3::from_translation(-0.0, -1e-12, 0.0)).unwrap();
        assert!(!write_tum(&t).contains('-'));
    }

    #[test]
    fn manifest_validation() {
        let ok = r#"{"name":"seq","frames":["a.png","b.png"],"ground_truth_file":"gt.txt","ground_truth_format":"tum"}"#;
        let m = parse_manifest(ok).unwrap();
        assert_eq!(m.frames.len(), 2);
        assert_eq!(m.ground_truth_format, Some(PoseFormat::Tum));
        assert!(parse_manifest(r#"{"name":"e","frames":[]}"#).is_err());
        assert!(parse_manifest(r#"{"name":"d","frames":["a","a"]}"#).is_err());
    }

    #[test]
    fn manifest_loads_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("gt.txt"), "0 0 0 0 0 0 0 1\n1 1 0 0 0 0 0 1\n").unwrap();
        std::fs::write(
            dir.path().join("m.json"),
            r#"{"name":"s","frames":["0.png","1.png"],"ground_truth_file":"gt.txt","ground_truth_format":"tum"}"#,
        )
        .unwrap();
        let seq = load_manifest(&dir.path().join("m.json")).unwrap();
        assert_eq!(seq.ground_truth.as_ref().unwrap().len(), 2);
        assert!(seq.frame_paths()[0].ends_with("0.png"));
    }
}
