mod commands;
mod config;
mod exit;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::parse_assignment;

#[derive(Parser)]
#[command(name = "empowerkit", version, about = "Conditional MI estimators and intrinsically motivated PPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Flags override file values.
#[derive(Args, Clone)]
struct Common {
    /// Plain-text `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimator RMSE comparison on the synthetic Gaussian family.
    MiBench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated estimator kinds.
        #[arg(long)]
        kinds: Option<String>,
        /// Number of seeds, starting at 0.
        #[arg(long)]
        seeds: Option<String>,
        /// Exit nonzero if any cell failed.
        #[arg(long)]
        strict: bool,
    },
    /// PPO training on PlanarLift.
    Train {
        #[command(flatten)]
        common: Common,
        /// none, icm, disagreement or empowerment_with_icm.
        #[arg(long)]
        mode: Option<String>,
        /// Environment-step budget.
        #[arg(long)]
        steps: Option<String>,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Mean-action evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory holding `agent.json`; may come from the config.
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        episodes: Option<String>,
        #[arg(long)]
        seed: Option<String>,
    },
    /// Estimators against exact discrete conditional MI.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kinds: Option<String>,
        #[arg(long)]
        joints: Option<String>,
        #[arg(long)]
        seeds: Option<String>,
    },
}

fn overrides(common: &Common, flags: &[(&str, Option<String>)]) -> Vec<(String, String)> {
    let mut out = common.set.clone();
    out.extend(flags.iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))));
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MiBench { common, kinds, seeds, strict } => {
            let strict = strict.then(|| "true".to_string());
            let sets = overrides(&common, &[("kinds", kinds), ("seeds", seeds), ("strict", strict)]);
            commands::mi_bench(common.config.as_deref(), &sets)
        }
        Command::Train { common, mode, steps, seed } => {
            let sets = overrides(&common, &[("mode", mode), ("total_steps", steps), ("seed", seed)]);
            commands::train(common.config.as_deref(), &sets)
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
            seed,
        } => {
            let sets = overrides(&common, &[("checkpoint", checkpoint), ("episodes", episodes), ("seed", seed)]);
            commands::eval(common.config.as_deref(), &sets)
        }
        Command::Oracle {
            common,
            kinds,
            joints,
            seeds,
        } => {
            let sets = overrides(&common, &[("kinds", kinds), ("joints", joints), ("seeds", seeds)]);
            commands::oracle(common.config.as_deref(), &sets)
        }
    };
    match result {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
