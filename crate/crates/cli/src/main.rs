use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use capsbench_cli::config::{Overrides, RunConfig};
use capsbench_cli::{affine_cmd, bench, params, train, CliError};

/// Capsule-network benchmark harness.
#[derive(Parser)]
#[command(name = "capsbench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics plus a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Stratified subset size applied to both splits.
        #[arg(long)]
        subset: Option<usize>,
        /// Repeat the run n times (seeds seed, seed+1, ...) and summarize.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
    },
    /// Evaluate a checkpoint on the configured test split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subset: Option<usize>,
    },
    /// Time training and inference steps for one or more configs.
    Bench {
        /// Config file; repeat the flag to compare several.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Timed batches per phase (medians are reported).
        #[arg(long, default_value_t = 20)]
        batches: usize,
        /// Warm-up batches per phase, excluded from timing.
        #[arg(long, default_value_t = 3)]
        warmups: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configs' batch size.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Parameter-count table; with no configs, the built-in published set.
    Params {
        #[arg(long)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transformation-robustness protocol on a 40x40 grid.
    Affine {
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subset: Option<usize>,
    },
}

fn run() -> Result<(), CliError> {
    match Cli::parse().command {
        Command::Train { config, out, seed, subset, repeat } => {
            let overrides = Overrides { seed, subset, ..Overrides::default() };
            let cfg = RunConfig::from_file(&config, overrides)?;
            if repeat == 0 {
                return Err(CliError::Config("--repeat must be >= 1".into()));
            }
            if repeat == 1 {
                train::cmd_train(&cfg, &out)?;
            } else {
                train::cmd_train_repeat(&cfg, &out, repeat)?;
            }
            Ok(())
        }
        Command::Eval { config, checkpoint, out, seed, subset } => {
            let overrides = Overrides { seed, subset, ..Overrides::default() };
            let cfg = RunConfig::from_file(&config, overrides)?;
            train::cmd_eval(&cfg, &checkpoint, &out)?;
            Ok(())
        }
        Command::Bench { config, out, batches, warmups, seed, batch_size } => {
            let overrides = Overrides { seed, batch_size, ..Overrides::default() };
            let cfgs: Vec<RunConfig> = config
                .iter()
                .map(|p| RunConfig::from_file(p, overrides))
                .collect::<Result<_, _>>()?;
            bench::cmd_bench(&cfgs, batches, warmups, &out)?;
            Ok(())
        }
        Command::Params { config, out } => {
            let rows = if config.is_empty() {
                params::paper_rows()?
            } else {
                let mut named = Vec::new();
                for path in &config {
                    let cfg = RunConfig::from_file(path, Overrides::default())?;
                    named.push((cfg.name.clone(), cfg.model.clone()));
                }
                params::rows_for_configs(&named)?
            };
            params::cmd_params(&rows, out.as_deref())?;
            Ok(())
        }
        Command::Affine { config, out, seed, subset } => {
            let overrides = Overrides { seed, subset, ..Overrides::default() };
            let cfgs: Vec<RunConfig> = config
                .iter()
                .map(|p| RunConfig::from_file(p, overrides))
                .collect::<Result<_, _>>()?;
            affine_cmd::cmd_affine(&cfgs, &out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("capsbench: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
