//! Serves a synthetic world over TCP with the line-delimited JSON protocol
//! and runs the odometry against it through the remote client.

use std::io::BufReader;
use std::net::TcpListener;
use std::time::Duration;

use kfvo::backend::{generate_world, serve_backend, Endpoint, RemoteBackend, WorldConfig};
use kfvo::commands::{frames_for_world, run_sequence, Decider};
use kfvo::geometry::{ate_rmse, Alignment};
use kfvo::rl::RewardParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = generate_world(&WorldConfig {
        length: 60,
        ..WorldConfig::default()
    })?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let mut served = world.clone();
    let server = std::thread::spawn(move || -> std::io::Result<()> {
        let (stream, _) = listener.accept()?;
        serve_backend(&mut served, BufReader::new(stream.try_clone()?), stream)
    });

    let endpoint = Endpoint::resolve(Some(&format!("tcp://{addr}")))?;
    let mut backend = RemoteBackend::connect(&endpoint, Duration::from_secs(10))?;
    let outcome = run_sequence(
        frames_for_world(&world),
        &mut backend,
        8,
        &mut Decider::Threshold(0.05),
        &RewardParams::default(),
    )?;
    drop(backend);
    server.join().expect("server thread")?;
    println!(
        "{} poses over {endpoint:?}, keyframe rate {:.3}, ATE {:.4} m",
        outcome.trajectory.len(),
        outcome.keyframe_rate(),
        ate_rmse(&outcome.trajectory, &world.ground_truth, Alignment::Sim3)?
    );
    Ok(())
}
