//! Runs the keep-all and threshold strategies on a generated world, writes
//! their estimates, and renders the ATE table the `eval` subcommand prints.

use kfvo::commands::{
    cmd_eval, cmd_generate, cmd_run, BackendConfig, EvalConfig, EvalEntry, GenerateConfig,
    RunConfig, StrategyConfig,
};
use kfvo::trajectory_io::PoseFormat;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("kfvo_evaluate");
    let worlds = cmd_generate(&GenerateConfig::default(), &dir.join("worlds"))?;
    let world_file = worlds[0].clone();
    let gt = world_file.with_extension("tum");

    let mut sequences = Vec::new();
    for (name, strategy) in [
        ("sw", StrategyConfig::Sw),
        ("threshold", StrategyConfig::Threshold { tau: 0.05 }),
    ] {
        let cfg = RunConfig {
            strategy,
            backend: BackendConfig::Synthetic {
                world: Default::default(),
                world_file: Some(world_file.clone()),
            },
            ..RunConfig::default()
        };
        let report = cmd_run(&cfg, &dir.join(name))?;
        sequences.push(EvalEntry {
            name: Some(name.into()),
            estimate: report.estimate_path,
            ground_truth: gt.clone(),
            format: PoseFormat::Tum,
            ground_truth_format: None,
        });
    }
    let table = cmd_eval(
        &EvalConfig {
            sequences,
            ..EvalConfig::default()
        },
        &dir.join("eval"),
    )?;
    print!("{}", table.render());
    Ok(())
}
