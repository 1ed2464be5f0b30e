//! A reduced ablation: each observation / reward variant is trained briefly
//! on a few worlds and scored on held-out worlds next to keep-all.

use kfvo::backend::WorldConfig;
use kfvo::commands::{cmd_ablate, AblateConfig, TrainConfig, WorldSet};
use kfvo::rl::PpoConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let world = WorldConfig {
        length: 100,
        ..WorldConfig::default()
    };
    let cfg = AblateConfig {
        train: TrainConfig {
            ppo: PpoConfig {
                n_envs: 8,
                rollout_len: 512,
                total_steps: 40_960,
                ..PpoConfig::default()
            },
            worlds: WorldSet::generated(world.clone(), 8, 0),
            ..TrainConfig::default()
        },
        eval_worlds: WorldSet::generated(world, 4, 1000),
        runs: 1,
        ..AblateConfig::default()
    };
    let rows = cmd_ablate(&cfg, &std::env::temp_dir().join("kfvo_ablation"))?;
    println!("{:<10} {:>10} {:>8}", "variant", "ATE (m)", "kf rate");
    for r in rows {
        println!("{:<10} {:>10.4} {:>8.3}", r.variant, r.mean_ate, r.keyframe_rate);
    }
    Ok(())
}
