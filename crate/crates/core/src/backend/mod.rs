//! Multi-view geometry backends.
//!
//! A backend receives the current window (anchor first) and returns, for
//! every frame, its pose relative to the anchor and an embedding token.
//! [`SyntheticWorld`] is a parallax-aware simulator; [`RemoteBackend`]
//! talks to an external model service over newline-delimited JSON.

pub mod remote;
pub mod synthetic;

use thiserror::Error;

use crate::geometry::Rigid3;

pub use remote::{serve_backend, Endpoint, DEFAULT_TIMEOUT, RemoteBackend, WireMessage, WirePose};
pub use synthetic::{generate_world, MotionProfile, NoiseParams, SyntheticWorld, WorldConfig};

/// Anchor-identity tolerance for in-process backends.
pub const ANCHOR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown frame {0}")]
    UnknownFrame(u64),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend reported failure: {0}")]
    Remote(String),
    #[error("backend did not answer within {0:?}")]
    Timeout(std::time::Duration),
    #[error("bad world config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRef {
    pub id: u64,
    pub reference: String,
}

/// The window handed to a backend. The first frame is the anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackendRequest {
    pub frames: Vec<FrameRef>,
}

impl BackendRequest {
    pub fn new(frames: Vec<FrameRef>) -> Self {
        Self { frames }
    }

    /// Builds a request from bare references. A reference whose text or file
    /// stem is an integer (`12`, `frames/000012.png`) takes that frame id;
    /// anything else is numbered by position.
    pub fn from_refs(refs: &[String]) -> Self {
        Self {
            frames: refs
                .iter()
                .enumerate()
                .map(|(i, r)| FrameRef {
                    id: numeric_id(r).unwrap_or(i as u64),
                    reference: r.clone(),
                })
                .collect(),
        }
    }

    pub fn anchor(&self) -> Option<&FrameRef> {
        self.frames.first()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames.iter().map(|f| f.id)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameEstimate {
    pub id: u64,
    /// Pose of this frame relative to the anchor (anchor → frame).
    pub rel_pose: Rigid3,
    pub token: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct BackendResponse {
    pub entries: Vec<FrameEstimate>,
}

impl BackendResponse {
    pub fn get(&self, id: u64) -> Option<&FrameEstimate> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn token_dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.token.len())
    }

    /// Checks ordering, completeness, token shape and the anchor-identity
    /// invariant against the originating request.
    pub fn validate(&self, request: &BackendRequest, anchor_tol: f64) -> Result<(), BackendError> {
        if self.entries.len() != request.len() {
            return Err(BackendError::Protocol(format!(
                "response covers {} frames, request had {}",
                self.entries.len(),
                request.len()
            )));
        }
        for (e, f) in self.entries.iter().zip(&request.frames) {
            if e.id != f.id {
                return Err(BackendError::Protocol(format!(
                    "response frame {} out of order (expected {})",
                    e.id, f.id
                )));
            }
        }
        if let Some(dim) = self.token_dim() {
            if self.entries.iter().any(|e| e.token.len() != dim) {
                return Err(BackendError::Protocol("inconsistent token dimensions".into()));
            }
        }
        if let Some(anchor) = self.entries.first() {
            let dev = anchor.rel_pose.max_abs_diff(&Rigid3::identity());
            if !(dev <= anchor_tol) {
                return Err(BackendError::Protocol(format!(
                    "anchor pose deviates from identity by {dev:.3e}"
                )));
            }
        }
        Ok(())
    }
}

fn numeric_id(reference: &str) -> Option<u64> {
    let r = reference.trim();
    r.parse().ok().or_else(|| {
        std::path::Path::new(r)
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
    })
}

/// Anything that can estimate anchor-relative poses for a window.
pub trait Backend {
    fn process(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;

    /// Token dimension, when known ahead of the first response.
    fn token_dim(&self) -> Option<usize>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn process(&mut self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).process(request)
    }

    fn token_dim(&self) -> Option<usize> {
        (**self).token_dim()
    }
}
