//! Command-line interface: seeded training runs, checkpoint evaluation, and
//! multi-run curve export.

use clap::{Parser, Subcommand};
use refil_core::config::{Algorithm, RunConfig};
use refil_core::error::HarnessError;
use refil_core::export::export_curves;
use refil_core::runner::{self, load_checkpointed_params, run_eval, run_train, CONFIG_FILE};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Output root override; relative `--out` paths resolve under it.
const OUT_ROOT_ENV: &str = "REFIL_OUT_ROOT";

#[derive(Parser)]
#[command(name = "refil", version, about = "Multi-agent Q-learning with randomized entity-wise factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy on the group matching game.
    Train {
        /// TOML config file; defaults apply for missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the algorithm (refil, qmix-attention, refil-vdn,
        /// vdn-attention, refil-fixed-oracle, refil-randomized-oracle).
        #[arg(long)]
        algo: Option<String>,
        /// Override total environment steps.
        #[arg(long)]
        steps: Option<u64>,
        /// Output directory (default `runs/{algo}-s{seed}`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with the greedy policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Run config; defaults to config.toml next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluation stream index (changes the evaluation episodes).
        #[arg(long, default_value_t = 0)]
        eval_index: u64,
    },
    /// Aggregate metrics from several run directories into one table.
    Export {
        /// Run directories, each containing metrics.csv.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Output file (default curves.csv in the working directory).
        #[arg(long, default_value = "curves.csv")]
        out: PathBuf,
    },
}

fn resolve_out_dir(requested: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    let out = requested
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-s{}", cfg.algorithm, cfg.seed)));
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if out.is_relative() => Path::new(&root).join(out),
        _ => out,
    }
}

fn cmd_train(
    config: Option<PathBuf>,
    seed: Option<u64>,
    algo: Option<String>,
    steps: Option<u64>,
    out: Option<PathBuf>,
) -> Result<(), HarnessError> {
    let mut cfg = match config {
        Some(path) => RunConfig::from_toml_file(&path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(algo) = algo {
        cfg.algorithm = algo.parse::<Algorithm>()?;
    }
    if let Some(steps) = steps {
        cfg.total_steps = steps;
    }
    let out_dir = resolve_out_dir(out, &cfg);
    println!(
        "training {} (seed {}) for {} env steps -> {}",
        cfg.algorithm,
        cfg.seed,
        cfg.total_steps,
        out_dir.display()
    );
    let report = run_train(&cfg, &out_dir)?;
    println!(
        "done: {} env steps, {} episodes, {} train steps",
        report.env_steps, report.episodes, report.train_steps
    );
    let e = report.final_eval;
    println!(
        "final eval over {} episodes: win rate {:.3} +- {:.3}, return {:.3} +- {:.3}, length {:.2} +- {:.2}",
        e.episodes, e.win_rate, e.win_ci95, e.mean_return, e.return_ci95, e.mean_length, e.length_ci95
    );
    Ok(())
}

fn cmd_eval(
    checkpoint: PathBuf,
    episodes: usize,
    config: Option<PathBuf>,
    eval_index: u64,
) -> Result<(), HarnessError> {
    let config_path = match config {
        Some(p) => p,
        None => checkpoint
            .parent()
            .map(|d| d.join(CONFIG_FILE))
            .ok_or_else(|| HarnessError::Invalid("cannot locate config next to checkpoint".into()))?,
    };
    let cfg = RunConfig::from_toml_file(&config_path)?;
    let net = load_checkpointed_params(&cfg, &checkpoint)?;
    let e = run_eval(&net, &cfg, episodes, runner::EVAL_CLI_STREAM_OFFSET + eval_index)?;
    println!(
        "eval over {} episodes: win rate {:.4} +- {:.4}, mean return {:.4} +- {:.4}, mean length {:.2} +- {:.2}",
        e.episodes, e.win_rate, e.win_ci95, e.mean_return, e.return_ci95, e.mean_length, e.length_ci95
    );
    Ok(())
}

fn cmd_export(runs: Vec<PathBuf>, out: PathBuf) -> Result<(), HarnessError> {
    let refs: Vec<&Path> = runs.iter().map(|p| p.as_path()).collect();
    export_curves(&refs, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            algo,
            steps,
            out,
        } => cmd_train(config, seed, algo, steps, out),
        Command::Eval {
            checkpoint,
            episodes,
            config,
            eval_index,
        } => cmd_eval(checkpoint, episodes, config, eval_index),
        Command::Export { runs, out } => cmd_export(runs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
