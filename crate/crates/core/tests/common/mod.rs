#![allow(dead_code)]

use kfvo::agent::Mlp;
use kfvo::backend::{generate_world, NoiseParams, SyntheticWorld, WorldConfig};
use kfvo::commands::frames_for_world;
use kfvo::geometry::Trajectory;
use kfvo::window::{Action, Odometry};
use nalgebra::DMatrix;

pub fn world(length: usize, seed: u64, noiseless: bool) -> SyntheticWorld {
    generate_world(&WorldConfig {
        length,
        seed,
        noise: if noiseless { NoiseParams::zero() } else { NoiseParams::default() },
        ..WorldConfig::default()
    })
    .unwrap()
}

/// Runs `actions` through a fresh odometry, checking the window invariants
/// after every frame. Frames past the last action are decided `Keyframe`.
pub fn simulate(world: &SyntheticWorld, capacity: usize, actions: &[Action]) -> Result<Trajectory, String> {
    let mut backend = world.clone();
    let mut odom = Odometry::new(capacity);
    let mut next = actions.iter().copied();
    let mut last_anchor = 0;
    let frames = frames_for_world(world);
    let n = frames.len();
    for (i, frame) in frames.into_iter().enumerate() {
        let full = odom.process_frame(frame, &mut backend).map_err(|e| e.to_string())?;
        if i + 1 < capacity && full {
            return Err(format!("window full after only {} frames", i + 1));
        }
        if i + 1 == capacity - 1 && odom.map.keyframe_count() != capacity - 1 {
            return Err(format!("{} keyframes after initialization", odom.map.keyframe_count()));
        }
        if full {
            odom.decide(next.next().unwrap_or(Action::Keyframe)).map_err(|e| e.to_string())?;
        }
        if odom.window.len() > capacity {
            return Err(format!("window holds {} frames", odom.window.len()));
        }
        let anchor = odom.window.anchor().map(|f| f.id).unwrap_or(0);
        if anchor < last_anchor {
            return Err(format!("anchor moved back from {last_anchor} to {anchor}"));
        }
        last_anchor = anchor;
    }
    if odom.decisions() + capacity - 1 != n {
        return Err(format!("{} decisions for {n} frames", odom.decisions()));
    }
    let traj = odom.finalize().map_err(|e| e.to_string())?;
    let ids: Vec<u64> = odom.timestamps().keys().copied().collect();
    if traj.len() != n || ids != (0..n as u64).collect::<Vec<_>>() {
        return Err(format!("trajectory covers {} of {n} frames", traj.len()));
    }
    Ok(traj)
}

/// Largest relative error, over every parameter of `mlp`, between the
/// analytic gradient of `Σ upstream ⊙ y` and central differences.
pub fn mlp_gradient_error(mlp: &Mlp, x: &DMatrix<f64>, upstream: &DMatrix<f64>, h: f64) -> f64 {
    let (_, cache) = mlp.forward_batch(x);
    let analytic: Vec<f64> = mlp.backward(&cache, upstream).params().copied().collect();
    let loss = |m: &Mlp| {
        let (y, _) = m.forward_batch(x);
        y.component_mul(upstream).sum()
    };
    let mut worst: f64 = 0.0;
    let mut probe = mlp.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = *probe.params_mut().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = orig + h;
        let up = loss(&probe);
        *probe.params_mut().nth(i).unwrap() = orig - h;
        let down = loss(&probe);
        *probe.params_mut().nth(i).unwrap() = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(a, numeric));
    }
    worst
}

/// `|a − b| / max(|a|, |b|, 1e-6)`; the floor keeps exact zeros from
/// inactive ReLU units from dividing by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
