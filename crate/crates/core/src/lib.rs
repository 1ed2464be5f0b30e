//! Keyframe-policy sliding-window visual odometry.
//!
//! A fixed-size window of frames is sent to a multi-view geometry backend,
//! which returns each frame's pose relative to the window's anchor. A small
//! actor network decides for every new frame whether it becomes a keyframe
//! (the window slides) or is discarded (only its offset to the latest
//! keyframe is kept). The agent is trained with PPO against a reward built
//! from Umeyama-aligned translation error.
//!
//! Modules:
//! - [`geometry`]: rigid/similarity transforms, Umeyama alignment, ATE
//! - [`trajectory_io`]: TUM/KITTI pose files and sequence manifests
//! - [`window`]: the sliding-window state machine and odometry driver
//! - [`backend`]: synthetic and remote pose backends
//! - [`agent`]: observations, actor/critic MLPs, checkpoints
//! - [`rl`]: reward, GAE, PPO, rollouts, training
//! - [`commands`]: the `generate`/`train`/`run`/`eval`/`ablate` drivers

pub mod agent;
pub mod backend;
pub mod commands;
pub mod geometry;
pub mod rl;
pub mod trajectory_io;
pub mod window;

pub use geometry::{Alignment, Rigid3, Sim3, Trajectory};
pub use window::{Action, Frame, GlobalMap, Odometry, WindowState};
