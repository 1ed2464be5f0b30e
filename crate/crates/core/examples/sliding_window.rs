//! Drives the sliding window by hand on a noiseless world, alternating
//! keyframe and discard decisions, and prints the window after each step.

use kfvo::backend::{generate_world, NoiseParams, WorldConfig};
use kfvo::commands::frames_for_world;
use kfvo::geometry::{ate_rmse, Alignment};
use kfvo::window::{Action, Odometry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut world = generate_world(&WorldConfig {
        length: 16,
        noise: NoiseParams::zero(),
        ..WorldConfig::default()
    })?;
    let gt = world.ground_truth.clone();
    let mut odom = Odometry::new(4);
    for (i, frame) in frames_for_world(&world).into_iter().enumerate() {
        if odom.process_frame(frame, &mut world)? {
            let action = if i % 2 == 0 { Action::Keyframe } else { Action::Discard };
            odom.decide(action)?;
            println!("frame {i:2}: {action:?} -> window {:?}", odom.window.ids());
        } else {
            println!("frame {i:2}: filling     -> window {:?}", odom.window.ids());
        }
    }
    let estimate = odom.finalize()?;
    println!(
        "{} poses, {} keyframes, ATE without alignment {:.2e} m",
        estimate.len(),
        odom.map.keyframe_count(),
        ate_rmse(&estimate, &gt, Alignment::None)?
    );
    Ok(())
}
