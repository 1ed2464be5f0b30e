//! Sliding-window anchor-frame bookkeeping.
//!
//! The window holds up to `capacity` frames; the first is the anchor whose
//! global pose is known. Every pushed frame is sent to the backend together
//! with the rest of the window, and all window frames get their global pose
//! rewritten as `global(anchor) ∘ rel(anchor → f)`.
//!
//! Until the window first fills, pushed frames are keyframes automatically.
//! Once full, the newest frame awaits a decision:
//!
//! * `Keyframe`: the anchor leaves, the second frame becomes anchor.
//! * `Discard`: the newest frame leaves; its pose relative to the most recent
//!   keyframe is kept and resolved against that keyframe at finalize time.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, BackendRequest, BackendResponse, FrameRef};
use crate::geometry::{relative_pose, Rigid3, Trajectory};

pub const DEFAULT_WINDOW: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WindowError {
    #[error("window is full; an action must be applied before the next push")]
    WindowFull,
    #[error("backend response does not cover window frame {0}")]
    MissingFrame(u64),
    #[error("window is not ready for a decision")]
    NotReady,
    #[error("frame {0} has no estimate or keyframe parent")]
    IncompleteMap(u64),
    #[error("frame id {0} does not increase")]
    OutOfOrder(u64),
    #[error("anchor frame {0} has no global pose")]
    UnknownAnchor(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Keyframe,
    Discard,
}

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Keyframe => 0,
            Action::Discard => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Action::Keyframe
        } else {
            Action::Discard
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: u64,
    pub timestamp: f64,
    /// Path or synthetic identifier handed to the backend.
    pub reference: String,
    /// Ground truth, available during training only.
    pub gt_pose: Option<Rigid3>,
}

impl Frame {
    pub fn new(id: u64, timestamp: f64, reference: impl Into<String>) -> Self {
        Self {
            id,
            timestamp,
            reference: reference.into(),
            gt_pose: None,
        }
    }

    pub fn with_gt(mut self, pose: Rigid3) -> Self {
        self.gt_pose = Some(pose);
        self
    }
}

#[derive(Clone, Debug)]
pub struct WindowState {
    capacity: usize,
    frames: VecDeque<Frame>,
    latest: Option<BackendResponse>,
    last_id: Option<u64>,
}

impl WindowState {
    /// Panics if `capacity < 2`.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 2, "window capacity must be at least 2");
        Self {
            capacity,
            frames: VecDeque::with_capacity(capacity),
            latest: None,
            last_id: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &Frame> + DoubleEndedIterator {
        self.frames.iter()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.frames.iter().map(|f| f.id).collect()
    }

    pub fn anchor(&self) -> Option<&Frame> {
        self.frames.front()
    }

    pub fn newest(&self) -> Option<&Frame> {
        self.frames.back()
    }

    /// Response for the current window contents, if one has been applied.
    pub fn latest_response(&self) -> Option<&BackendResponse> {
        self.latest.as_ref()
    }

    /// True when the window is full and its backend response is current.
    pub fn awaiting_decision(&self) -> bool {
        self.is_full() && self.latest.is_some()
    }

    pub fn request(&self) -> BackendRequest {
        BackendRequest::new(
            self.frames
                .iter()
                .map(|f| FrameRef {
                    id: f.id,
                    reference: f.reference.clone(),
                })
                .collect(),
        )
    }

    pub fn push_frame(&mut self, frame: Frame) -> Result<(), WindowError> {
        if self.is_full() {
            return Err(WindowError::WindowFull);
        }
        if self.last_id.is_some_and(|last| frame.id <= last) {
            return Err(WindowError::OutOfOrder(frame.id));
        }
        self.last_id = Some(frame.id);
        self.frames.push_back(frame);
        self.latest = None;
        Ok(())
    }

    /// Chains the anchor-relative poses into global poses (last write wins).
    pub fn apply_backend(
        &mut self,
        response: BackendResponse,
        map: &mut GlobalMap,
    ) -> Result<(), WindowError> {
        for f in &self.frames {
            if response.get(f.id).is_none() {
                return Err(WindowError::MissingFrame(f.id));
            }
        }
        let Some(anchor) = self.frames.front() else {
            return Ok(());
        };
        let anchor_global = match map.global_poses.get(&anchor.id) {
            Some(p) => *p,
            None if map.global_poses.is_empty() => {
                map.global_poses.insert(anchor.id, Rigid3::identity());
                map.keyframe_flags.insert(anchor.id, true);
                Rigid3::identity()
            }
            None => return Err(WindowError::UnknownAnchor(anchor.id)),
        };
        for f in self.frames.iter().skip(1) {
            let rel = &response.get(f.id).expect("checked above").rel_pose;
            map.global_poses.insert(f.id, anchor_global.compose(rel));
        }
        if !self.is_full() {
            let newest = self.frames.back().expect("non-empty").id;
            map.keyframe_flags.insert(newest, true);
        }
        self.latest = Some(response);
        Ok(())
    }

    pub fn apply_action(&mut self, map: &mut GlobalMap, action: Action) -> Result<(), WindowError> {
        if !self.awaiting_decision() {
            return Err(WindowError::NotReady);
        }
        let response = self.latest.take().expect("checked by awaiting_decision");
        match action {
            Action::Keyframe => {
                let newest = self.frames.back().expect("full window").id;
                map.keyframe_flags.insert(newest, true);
                self.frames.pop_front();
            }
            Action::Discard => {
                let newest = self.frames.pop_back().expect("full window");
                let parent = self.frames.back().expect("capacity >= 2").id;
                let rel_parent = response.get(parent).expect("validated").rel_pose;
                let rel_newest = response.get(newest.id).expect("validated").rel_pose;
                map.nonkey_offsets
                    .insert(newest.id, (parent, relative_pose(&rel_parent, &rel_newest)));
                map.keyframe_flags.insert(newest.id, false);
                map.global_poses.remove(&newest.id);
            }
        }
        Ok(())
    }
}

/// Accumulated global estimates for the whole sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GlobalMap {
    pub global_poses: BTreeMap<u64, Rigid3>,
    pub keyframe_flags: BTreeMap<u64, bool>,
    /// Non-keyframe id → (parent keyframe id, pose relative to the parent).
    pub nonkey_offsets: BTreeMap<u64, (u64, Rigid3)>,
}

impl GlobalMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframe_flags.values().filter(|k| **k).count()
    }

    /// Current best pose for a frame, resolving non-keyframes through their parent.
    pub fn resolve(&self, id: u64) -> Option<Rigid3> {
        if let Some((parent, offset)) = self.nonkey_offsets.get(&id) {
            return self.global_poses.get(parent).map(|p| p.compose(offset));
        }
        self.global_poses.get(&id).copied()
    }
}

/// Assembles the full trajectory for every frame id in `timestamps`.
pub fn finalize_trajectory(
    map: &GlobalMap,
    timestamps: &BTreeMap<u64, f64>,
) -> Result<Trajectory, WindowError> {
    let mut entries = Vec::with_capacity(timestamps.len());
    for (&id, &t) in timestamps {
        let pose = map.resolve(id).ok_or(WindowError::IncompleteMap(id))?;
        entries.push((t, pose));
    }
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    Trajectory::from_entries(entries).map_err(|_| {
        WindowError::OutOfOrder(timestamps.keys().next_back().copied().unwrap_or_default())
    })
}

#[derive(Debug, Error)]
pub enum OdometryError {
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error("backend failed on frame {frame}: {source}")]
    Backend {
        frame: u64,
        #[source]
        source: BackendError,
    },
}

/// Window + map + timestamps, driven one frame at a time.
#[derive(Clone, Debug)]
pub struct Odometry {
    pub window: WindowState,
    pub map: GlobalMap,
    timestamps: BTreeMap<u64, f64>,
    decisions: usize,
}

impl Odometry {
    pub fn new(capacity: usize) -> Self {
        Self {
            window: WindowState::new(capacity),
            map: GlobalMap::new(),
            timestamps: BTreeMap::new(),
            decisions: 0,
        }
    }

    /// Pushes a frame and runs the backend on the resulting window.
    ///
    /// Returns `true` when the window is full and a decision is required.
    pub fn process_frame<B: Backend + ?Sized>(
        &mut self,
        frame: Frame,
        backend: &mut B,
    ) -> Result<bool, OdometryError> {
        let id = frame.id;
        let timestamp = frame.timestamp;
        self.window.push_frame(frame)?;
        let request = self.window.request();
        let response = backend
            .process(&request)
            .and_then(|r| r.validate(&request, f64::INFINITY).map(|_| r))
            .map_err(|source| OdometryError::Backend { frame: id, source })?;
        self.window.apply_backend(response, &mut self.map)?;
        self.timestamps.insert(id, timestamp);
        Ok(self.window.is_full())
    }

    pub fn decide(&mut self, action: Action) -> Result<(), OdometryError> {
        self.window.apply_action(&mut self.map, action)?;
        self.decisions += 1;
        Ok(())
    }

    pub fn decisions(&self) -> usize {
        self.decisions
    }

    pub fn timestamps(&self) -> &BTreeMap<u64, f64> {
        &self.timestamps
    }

    pub fn finalize(&self) -> Result<Trajectory, WindowError> {
        finalize_trajectory(&self.map, &self.timestamps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::FrameEstimate;

    fn frame(id: u64) -> Frame {
        Frame::new(id, id as f64 * 0.1, id.to_string())
    }

    /// Response whose anchor-relative poses come from a global table.
    fn response_from(globals: &dyn Fn(u64) -> Rigid3, ids: &[u64]) -> BackendResponse {
        let anchor = globals(ids[0]);
        BackendResponse {
            entries: ids
                .iter()
                .map(|&id| FrameEstimate {
                    id,
                    rel_pose: relative_pose(&anchor, &globals(id)),
                    token: vec![0.0],
                })
                .collect(),
        }
    }

    fn line_world(id: u64) -> Rigid3 {
        Rigid3::from_translation(id as f64, 0.0, 0.0)
    }

    fn push_and_apply(w: &mut WindowState, m: &mut GlobalMap, id: u64) {
        w.push_frame(frame(id)).unwrap();
        let r = response_from(&line_world, &w.ids());
        w.apply_backend(r, m).unwrap();
    }

    #[test]
    fn initialization_fills_seven_keyframes() {
        let mut w = WindowState::new(8);
        let mut m = GlobalMap::new();
        push_and_apply(&mut w, &mut m, 0);
        assert_eq!(w.anchor().unwrap().id, 0);
        for id in 1..7 {
            push_and_apply(&mut w, &mut m, id);
        }
        assert_eq!(m.keyframe_count(), 7);
        assert!(!w.is_full());
        push_and_apply(&mut w, &mut m, 7);
        assert_eq!(w.len(), 8);
        assert!(w.awaiting_decision());
        assert_eq!(m.keyframe_count(), 7);
        assert_eq!(w.push_frame(frame(8)), Err(WindowError::WindowFull));
    }

    #[test]
    fn keyframe_shifts_anchor() {
        let mut w = WindowState::new(8);
        let mut m = GlobalMap::new();
        for id in 0..8 {
            push_and_apply(&mut w, &mut m, id);
        }
        w.apply_action(&mut m, Action::Keyframe).unwrap();
        assert_eq!(w.ids(), (1..8).collect::<Vec<_>>());
        assert_eq!(w.anchor().unwrap().id, 1);
        assert_eq!(m.keyframe_flags[&7], true);
        w.push_frame(frame(8)).unwrap();
    }

    #[test]
    fn discard_records_offset_against_latest_keyframe() {
        let mut w = WindowState::new(8);
        let mut m = GlobalMap::new();
        for id in 0..8 {
            push_and_apply(&mut w, &mut m, id);
        }
        w.apply_action(&mut m, Action::Discard).unwrap();
        assert_eq!(w.ids(), (0..7).collect::<Vec<_>>());
        let (parent, offset) = m.nonkey_offsets[&7];
        assert_eq!(parent, 6);
        assert!(offset.max_abs_diff(&Rigid3::from_translation(1.0, 0.0, 0.0)) < 1e-12);
        assert!(!m.global_poses.contains_key(&7));

        push_and_apply(&mut w, &mut m, 8);
        w.apply_action(&mut m, Action::Discard).unwrap();
        assert_eq!(w.ids(), (0..7).collect::<Vec<_>>());
        assert_eq!(m.nonkey_offsets.len(), 2);
        assert_eq!(m.nonkey_offsets[&8].0, 6);
    }

    #[test]
    fn action_requires_full_fresh_window() {
        let mut w = WindowState::new(8);
        let mut m = GlobalMap::new();
        for id in 0..7 {
            push_and_apply(&mut w, &mut m, id);
        }
        assert_eq!(w.apply_action(&mut m, Action::Keyframe), Err(WindowError::NotReady));
        w.push_frame(frame(7)).unwrap();
        // Pushed but not yet processed by the backend.
        assert_eq!(w.apply_action(&mut m, Action::Discard), Err(WindowError::NotReady));
    }

    #[test]
    fn missing_frame_in_response() {
        let mut w = WindowState::new(8);
        let mut m = GlobalMap::new();
        push_and_apply(&mut w, &mut m, 0);
        w.push_frame(frame(1)).unwrap();
        let r = response_from(&line_world, &[0]);
        assert_eq!(w.apply_backend(r, &mut m), Err(WindowError::MissingFrame(1)));
    }

    #[test]
    fn apply_backend_chains_from_anchor_global() {
        let mut w = WindowState::new(3);
        let mut m = GlobalMap::new();
        let g = Rigid3::from_rotation_vector(
            nalgebra::Vector3::new(0.0, 0.0, 0.5),
            nalgebra::Vector3::new(1.0, 2.0, 3.0),
        );
        m.global_poses.insert(4, g);
        w.push_frame(frame(4)).unwrap();
        w.push_frame(frame(5)).unwrap();
        let rel = Rigid3::from_translation(0.5, 0.0, 0.0);
        let resp = BackendResponse {
            entries: vec![
                FrameEstimate {
                    id: 4,
                    rel_pose: Rigid3::identity(),
                    token: vec![],
                },
                FrameEstimate {
                    id: 5,
                    rel_pose: rel,
                    token: vec![],
                },
            ],
        };
        w.apply_backend(resp, &mut m).unwrap();
        assert!(m.global_poses[&5].max_abs_diff(&g.compose(&rel)) < 1e-15);
    }

    #[test]
    fn refinement_propagates_to_discarded_children() {
        let mut w = WindowState::new(3);
        let mut m = GlobalMap::new();
        push_and_apply(&mut w, &mut m, 0);
        push_and_apply(&mut w, &mut m, 1);
        push_and_apply(&mut w, &mut m, 2);
        w.apply_action(&mut m, Action::Discard).unwrap();
        // Frame 1 is the parent of discarded frame 2.
        assert_eq!(m.nonkey_offsets[&2].0, 1);

        // Next window re-estimates frame 1 with a different (biased) answer.
        w.push_frame(frame(3)).unwrap();
        let biased = |id: u64| {
            if id == 1 {
                Rigid3::from_translation(1.5, 0.0, 0.0)
            } else {
                line_world(id)
            }
        };
        w.apply_backend(response_from(&biased, &[0, 1, 3]), &mut m).unwrap();
        w.apply_action(&mut m, Action::Keyframe).unwrap();

        let ts: BTreeMap<u64, f64> = (0..4).map(|i| (i, i as f64)).collect();
        let traj = finalize_trajectory(&m, &ts).unwrap();
        let p2 = traj.entries()[2].1.translation.x;
        assert!((p2 - 2.5).abs() < 1e-12, "child follows refined parent, got {p2}");
    }

    #[test]
    fn finalize_reports_unresolved_frames() {
        let m = GlobalMap::new();
        let ts: BTreeMap<u64, f64> = [(0, 0.0)].into_iter().collect();
        assert_eq!(finalize_trajectory(&m, &ts), Err(WindowError::IncompleteMap(0)));
    }

    #[test]
    fn out_of_order_push_rejected() {
        let mut w = WindowState::new(4);
        w.push_frame(frame(3)).unwrap();
        assert_eq!(w.push_frame(frame(3)), Err(WindowError::OutOfOrder(3)));
    }
}
