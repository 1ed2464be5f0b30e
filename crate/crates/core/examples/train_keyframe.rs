//! Trains the keyframe policy on stop-and-go worlds, then compares its
//! greedy decisions against keeping every frame on held-out worlds.
//!
//! Usage: `cargo run --release --example train_keyframe [total_steps] [out_dir]`

use std::path::PathBuf;
use std::time::Instant;

use kfvo::agent::Checkpoint;
use kfvo::backend::WorldConfig;
use kfvo::commands::{cmd_train, score_worlds, Decider, TrainConfig, WorldSet};
use kfvo::rl::PpoConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let total_steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200_000);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("kfvo_train_keyframe"));

    let cfg = TrainConfig {
        ppo: PpoConfig {
            total_steps,
            ..PpoConfig::default()
        },
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let summary = cmd_train(&cfg, &out)?;
    println!(
        "trained {} steps in {:.1?}; checkpoint at {}",
        summary.final_step,
        start.elapsed(),
        summary.checkpoint.display()
    );

    let held_out = WorldSet::generated(WorldConfig::default(), 10, 1000).load()?;
    let ckpt = Checkpoint::load(&summary.checkpoint)?;
    let window = cfg.env.window;
    let policy = score_worlds(&held_out, 3, window, || Decider::policy(ckpt.clone(), true, 0))?;
    let sw = score_worlds(&held_out, 3, window, || Decider::KeepAll)?;

    let mut wins = 0;
    println!("{:<12} {:>10} {:>10} {:>8}", "world", "policy", "sw", "kf rate");
    for (p, s) in policy.iter().zip(&sw) {
        wins += usize::from(p.median_ate < s.median_ate);
        println!(
            "{:<12} {:>10.4} {:>10.4} {:>8.3}",
            p.world, p.median_ate, s.median_ate, p.keyframe_rate
        );
    }
    println!("policy better on {wins}/{} worlds", policy.len());
    Ok(())
}
