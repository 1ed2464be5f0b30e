//! Rigid and similarity transforms, Umeyama alignment, and absolute
//! trajectory error.
//!
//! Rotations are stored as unit quaternions and renormalized after every
//! composition so long chains of relative motions do not drift off the
//! unit sphere. Rotation vectors only appear at the agent boundary.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default timestamp association tolerance for ATE, in seconds.
pub const DEFAULT_ASSOCIATION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("no timestamp pairs associated between estimate and ground truth")]
    NoAssociation,
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("timestamps must be strictly increasing (entry {0})")]
    NonMonotonic(usize),
}

/// A rigid body transform: rotation followed by translation.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rigid3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl fmt::Debug for Rigid3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Rigid3(t: [{:.6}, {:.6}, {:.6}], q: [w {:.6}, x {:.6}, y {:.6}, z {:.6}])",
            self.translation.x, self.translation.y, self.translation.z, q.w, q.i, q.j, q.k
        )
    }
}

impl Default for Rigid3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rigid3 {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::new(x, y, z))
    }

    /// Builds a pose from a rotation vector (axis * angle) and a translation.
    pub fn from_rotation_vector(omega: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(omega), translation)
    }

    /// Builds a pose from raw quaternion components, normalizing them.
    pub fn from_quaternion_xyzw(q: [f64; 4], translation: Vector3<f64>) -> Self {
        Self::new(
            UnitQuaternion::new_normalize(Quaternion::new(q[3], q[0], q[1], q[2])),
            translation,
        )
    }

    /// Builds a pose from a rotation matrix that is assumed orthonormal up to
    /// small noise. The matrix is projected onto SO(3) first.
    pub fn from_matrix_parts(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let r = nearest_rotation(rotation);
        Self::new(
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r)),
            translation,
        )
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Quaternion components in `[qx, qy, qz, qw]` order.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.i, q.j, q.k, q.w]
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.rotation.scaled_axis()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Rigid3) -> Rigid3 {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        Rigid3 {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Rigid3 {
        let rotation = self.rotation.inverse();
        Rigid3 {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Largest absolute difference between the rotation matrices and
    /// translations of two poses.
    pub fn max_abs_diff(&self, other: &Rigid3) -> f64 {
        let dr = (self.rotation_matrix() - other.rotation_matrix()).abs().max();
        let dt = (self.translation - other.translation).abs().max();
        dr.max(dt)
    }
}

impl Mul for Rigid3 {
    type Output = Rigid3;

    fn mul(self, rhs: Rigid3) -> Rigid3 {
        self.compose(&rhs)
    }
}

/// `a ∘ b`.
pub fn compose(a: &Rigid3, b: &Rigid3) -> Rigid3 {
    a.compose(b)
}

/// Pose of `world_b` expressed in the frame of `world_a`: `inverse(a) ∘ b`.
pub fn relative_pose(world_a: &Rigid3, world_b: &Rigid3) -> Rigid3 {
    world_a.inverse().compose(world_b)
}

/// Projects a 3x3 matrix onto the closest rotation (polar decomposition).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// A similarity transform `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Sim3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3 {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Panics if `scale` is not strictly positive and finite.
    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        assert!(
            scale > 0.0 && scale.is_finite(),
            "Sim3 scale must be positive, got {scale}"
        );
        Self {
            scale,
            rotation,
            translation,
        }
    }

    pub fn from_rigid(rigid: &Rigid3) -> Self {
        Self::new(1.0, rigid.rotation, rigid.translation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Moves a whole camera pose: positions are scaled, orientations only
    /// rotated.
    pub fn transform_pose(&self, pose: &Rigid3) -> Rigid3 {
        let mut rotation = self.rotation * pose.rotation;
        rotation.renormalize();
        Rigid3::new(rotation, self.transform_point(&pose.translation))
    }

    pub fn compose(&self, other: &Sim3) -> Sim3 {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        Sim3::new(
            self.scale * other.scale,
            rotation,
            self.transform_point(&other.translation),
        )
    }

    pub fn inverse(&self) -> Sim3 {
        let rotation = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        Sim3::new(scale, rotation, -(scale * (rotation * self.translation)))
    }
}

/// Time-ordered sequence of camera poses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    entries: Vec<(f64, Rigid3)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fails if timestamps are not strictly increasing or not finite.
    pub fn from_entries(entries: Vec<(f64, Rigid3)>) -> Result<Self, GeometryError> {
        for (i, w) in entries.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(GeometryError::NonMonotonic(i + 1));
            }
        }
        if let Some(i) = entries.iter().position(|(t, _)| !t.is_finite()) {
            return Err(GeometryError::NonMonotonic(i));
        }
        Ok(Self { entries })
    }

    pub fn push(&mut self, timestamp: f64, pose: Rigid3) -> Result<(), GeometryError> {
        if !timestamp.is_finite() {
            return Err(GeometryError::NonMonotonic(self.entries.len()));
        }
        if let Some((last, _)) = self.entries.last() {
            if !(timestamp > *last) {
                return Err(GeometryError::NonMonotonic(self.entries.len()));
            }
        }
        self.entries.push((timestamp, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, Rigid3)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Rigid3)> {
        self.entries.iter()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(t, _)| *t)
    }

    pub fn poses(&self) -> impl Iterator<Item = &Rigid3> {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.entries.iter().map(|(_, p)| p.translation).collect()
    }

    /// Applies a similarity transform to every pose.
    pub fn transformed(&self, g: &Sim3) -> Trajectory {
        Trajectory {
            entries: self
                .entries
                .iter()
                .map(|(t, p)| (*t, g.transform_pose(p)))
                .collect(),
        }
    }

    /// Index of the entry whose timestamp is closest to `t`, if within `tolerance`.
    pub fn nearest(&self, t: f64, tolerance: f64) -> Option<usize> {
        let idx = self.entries.partition_point(|(ts, _)| *ts < t);
        let mut best: Option<(usize, f64)> = None;
        for cand in [idx.wrapping_sub(1), idx] {
            if let Some((ts, _)) = self.entries.get(cand) {
                let d = (ts - t).abs();
                if d <= tolerance && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((cand, d));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

/// True for fewer than three points, or points that are (nearly) coincident
/// or collinear, judged by the eigenvalues of their spread matrix.
pub fn is_degenerate(points: &[Vector3<f64>]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let n = points.len() as f64;
    let mu = points.iter().sum::<Vector3<f64>>() / n;
    let spread = points
        .iter()
        .map(|p| (p - mu) * (p - mu).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let mut eig = spread.symmetric_eigenvalues();
    eig.as_mut_slice()
        .sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let scale_ref = eig[0].abs().max(f64::MIN_POSITIVE);
    eig[0] <= 1e-18 || eig[1] <= 1e-10 * scale_ref
}

/// Least-squares similarity (or rigid, when `with_scale` is off) transform
/// mapping `source` onto `target`.
///
/// Minimizes `Σ ‖target_i − (s·R·source_i + t)‖²`. A reflection in the SVD
/// solution is corrected by flipping the smallest singular direction.
pub fn umeyama_align(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    with_scale: bool,
) -> Result<Sim3, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::LengthMismatch(source.len(), target.len()));
    }
    let n = source.len();
    if n < 3 {
        return Err(GeometryError::DegenerateInput(format!(
            "need at least 3 point pairs, got {n}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let mu_src = source.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_tgt = target.iter().sum::<Vector3<f64>>() * inv_n;

    // Collinear or coincident sources leave the rotation undetermined.
    if is_degenerate(source) {
        return Err(GeometryError::DegenerateInput(
            "source points are coincident or collinear".into(),
        ));
    }

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, t) in source.iter().zip(target) {
        let ds = s - mu_src;
        let dt = t - mu_tgt;
        cov += dt * ds.transpose();
        var_src += ds.norm_squared();
    }
    cov *= inv_n;
    var_src *= inv_n;

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let sv = svd.singular_values;
    if sv.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::DegenerateInput("non-finite covariance".into()));
    }

    // nalgebra does not guarantee singular value ordering; find the smallest.
    let min_idx = (0..3)
        .min_by(|&a, &b| sv[a].partial_cmp(&sv[b]).unwrap())
        .unwrap();
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d[min_idx] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&d) * v_t;

    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| sv[i] * d[i]).sum();
        let s = trace / var_src;
        if !(s > 0.0 && s.is_finite()) {
            return Err(GeometryError::DegenerateInput(format!(
                "non-positive scale estimate {s}"
            )));
        }
        s
    } else {
        1.0
    };
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = mu_tgt - scale * (rotation * mu_src);
    Ok(Sim3::new(scale, rotation, translation))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    None,
    Se3,
    #[default]
    Sim3,
}

impl std::str::FromStr for Alignment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Alignment::None),
            "se3" => Ok(Alignment::Se3),
            "sim3" => Ok(Alignment::Sim3),
            other => Err(format!("unknown alignment `{other}`")),
        }
    }
}

/// Index pairs `(estimate, ground_truth)` matched by nearest timestamp.
pub fn associate(
    estimate: &Trajectory,
    ground_truth: &Trajectory,
    tolerance: f64,
) -> Vec<(usize, usize)> {
    estimate
        .timestamps()
        .enumerate()
        .filter_map(|(i, t)| ground_truth.nearest(t, tolerance).map(|j| (i, j)))
        .collect()
}

/// Full ATE evaluation result, including the aligned positions for plotting.
#[derive(Clone, Debug)]
pub struct AteReport {
    pub rmse: f64,
    pub alignment: Sim3,
    pub pairs: Vec<(usize, usize)>,
    /// `(timestamp, aligned estimate position, ground-truth position)`.
    pub aligned: Vec<(f64, Vector3<f64>, Vector3<f64>)>,
}

pub fn evaluate_ate(
    estimate: &Trajectory,
    ground_truth: &Trajectory,
    alignment: Alignment,
    tolerance: f64,
) -> Result<AteReport, GeometryError> {
    let pairs = associate(estimate, ground_truth, tolerance);
    if pairs.is_empty() {
        return Err(GeometryError::NoAssociation);
    }
    let est: Vec<_> = pairs
        .iter()
        .map(|&(i, _)| estimate.entries()[i].1.translation)
        .collect();
    let gt: Vec<_> = pairs
        .iter()
        .map(|&(_, j)| ground_truth.entries()[j].1.translation)
        .collect();
    let transform = match alignment {
        Alignment::None => Sim3::identity(),
        Alignment::Se3 => umeyama_align(&est, &gt, false)?,
        Alignment::Sim3 => umeyama_align(&est, &gt, true)?,
    };
    let aligned: Vec<_> = pairs
        .iter()
        .zip(est.iter().zip(&gt))
        .map(|(&(i, _), (e, g))| (estimate.entries()[i].0, transform.transform_point(e), *g))
        .collect();
    let rmse = rmse_of(aligned.iter().map(|(_, e, g)| (e - g).norm_squared()));
    Ok(AteReport {
        rmse,
        alignment: transform,
        pairs,
        aligned,
    })
}

/// RMSE of translational residuals after the requested alignment, using the
/// default 20 ms association tolerance.
pub fn ate_rmse(
    estimate: &Trajectory,
    ground_truth: &Trajectory,
    alignment: Alignment,
) -> Result<f64, GeometryError> {
    evaluate_ate(estimate, ground_truth, alignment, DEFAULT_ASSOCIATION_TOLERANCE).map(|r| r.rmse)
}

/// Root mean square of already-squared residuals.
pub(crate) fn rmse_of(squared: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = squared.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}
