//! Queries the synthetic backend directly and shows how pose noise grows
//! as the window's mean baseline shrinks.

use kfvo::backend::{generate_world, Backend, BackendRequest, MotionProfile, WorldConfig};
use kfvo::geometry::relative_pose;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut world = generate_world(&WorldConfig {
        length: 120,
        profile: MotionProfile::StopAndGo,
        seed: 3,
        ..WorldConfig::default()
    })?;
    println!("world `{}`: {} frames, token dim {}", world.name, world.len(), world.token_dim);
    for start in (0..112).step_by(16) {
        let refs: Vec<String> = (start..start + 8).map(|i: u64| i.to_string()).collect();
        let ids: Vec<u64> = (start..start + 8).collect();
        let baseline = world.mean_baseline(&ids)?;
        let response = world.process(&BackendRequest::from_refs(&refs))?;
        let anchor = *world.gt_pose(start).unwrap();
        let newest = start + 7;
        let truth = relative_pose(&anchor, world.gt_pose(newest).unwrap());
        let est = response.get(newest).unwrap();
        println!(
            "frames {start:3}..{:3}  baseline {baseline:.4} m  sigma {:.4} m  error {:.4} m",
            newest,
            world.noise.sigma(baseline),
            (est.rel_pose.translation - truth.translation).norm()
        );
    }
    Ok(())
}
