//! PPO on a two-state contextual bandit: one action pays +0.001, the other
//! −0.01. Prints the sampled optimal-action rate after every update.

use std::time::Instant;

use kfvo::rl::{ContextualBandit, PpoConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = PpoConfig {
        n_envs: 8,
        rollout_len: 256,
        total_steps: 50_000,
        ..PpoConfig::default()
    };
    let envs = (0..cfg.n_envs).map(|_| ContextualBandit::new()).collect();
    let mut trainer = Trainer::new(cfg, envs, 128, 7)?;
    let start = Instant::now();
    trainer.train(|r, _| {
        println!(
            "update {:3}  step {:6}  optimal rate {:.3}  entropy {:.3}",
            r.update, r.step, r.optimal_rate, r.entropy
        );
        Ok(())
    })?;
    println!("finished in {:.2?}", start.elapsed());
    Ok(())
}
