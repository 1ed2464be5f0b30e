use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kfvo::commands::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_run, cmd_train, load_config, AblateConfig,
    CommandError, EvalConfig, GenerateConfig, RunConfig, TrainConfig,
};

/// Keyframe-policy sliding-window visual odometry.
#[derive(Parser)]
#[command(name = "kfvo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic worlds.
    Generate(Common),
    /// Train the keyframe policy with PPO.
    Train(Common),
    /// Run one sequence with a keyframe strategy.
    Run(Common),
    /// Compute ATE tables for estimate / ground-truth pairs.
    Eval(Common),
    /// Train and score the observation and reward ablations.
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn execute(command: Command) -> Result<(), CommandError> {
    match command {
        Command::Generate(c) => {
            let mut cfg: GenerateConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.world.seed = s;
            }
            for path in cmd_generate(&cfg, &c.out)? {
                println!("{}", path.display());
            }
        }
        Command::Train(c) => {
            let mut cfg: TrainConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let summary = cmd_train(&cfg, &c.out)?;
            println!("{} steps; checkpoint {}", summary.final_step, summary.checkpoint.display());
        }
        Command::Run(c) => {
            let mut cfg: RunConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let report = cmd_run(&cfg, &c.out)?;
            print!("keyframe rate {:.3}", report.outcome.keyframe_rate());
            match report.ate {
                Some(ate) => println!(", ATE {ate:.3} m"),
                None => println!(),
            }
        }
        Command::Eval(c) => {
            let cfg: EvalConfig = load_config(c.config.as_deref())?;
            print!("{}", cmd_eval(&cfg, &c.out)?.render());
        }
        Command::Ablate(c) => {
            let mut cfg: AblateConfig = load_config(c.config.as_deref())?;
            if let Some(s) = c.seed {
                cfg.train.seed = s;
            }
            println!("{:<10} {:>10} {:>8}", "variant", "ATE (m)", "kf rate");
            for row in cmd_ablate(&cfg, &c.out)? {
                println!("{:<10} {:>10.3} {:>8.3}", row.variant, row.mean_ate, row.keyframe_rate);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
