use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use orderlab::estimator::EstimatorMode;

mod artifacts;
mod commands;
mod config;
mod error;

use artifacts::{resolve_out_dir, Run};
use commands::Ctx;
use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "orderlab", version, about = "Estimate how batch order changes an Adam training run")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override the top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Estimator mode, overriding the config.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<EstimatorMode>,
    /// Also retrain under each order for ground truth.
    #[arg(long, global = true)]
    oracle: bool,
    /// Output directory (beats ORDERLAB_OUT and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Accept upstream artifacts from a different config.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the corpus and train the reference trajectory.
    TrainRef,
    /// Precompute update terms for every (step, batch) pair.
    BuildStore,
    /// Estimate final performance for given orders.
    Estimate {
        /// `identity`, `3,1,2,0`, or `@FILE` with one order per line.
        #[arg(long, required = true)]
        perm: Vec<String>,
        /// Evaluate every step, not just the last.
        #[arg(long)]
        all_steps: bool,
    },
    /// Compare estimators and the random baseline against retraining.
    Absdiff,
    /// Search for a good order and score the baseline schedulers.
    Curriculum {
        /// Sort baselines hard to easy.
        #[arg(long)]
        descending: bool,
    },
    /// Memorization heatmap and generalization curves.
    Memgen,
    /// Amortized estimation cost against retraining.
    Timing,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainRef => "train-ref",
            Command::BuildStore => "build-store",
            Command::Estimate { .. } => "estimate",
            Command::Absdiff => "absdiff",
            Command::Curriculum { .. } => "curriculum",
            Command::Memgen => "memgen",
            Command::Timing => "timing",
        }
    }
}

fn parse_mode(s: &str) -> Result<EstimatorMode, String> {
    s.parse().map_err(|e: orderlab::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config_path = cli.config.ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let mut cfg = RunConfig::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size worker pool: {e}")))?;
    }
    let out = resolve_out_dir(
        cli.out.as_deref(),
        std::env::var("ORDERLAB_OUT").ok(),
        cfg.out_dir.as_deref(),
        &config_path,
    );
    let mut run = Run::new(out, cli.command.name(), cfg.digest(), cli.force)?;
    let ctx = Ctx {
        config_dir: commands::config_dir(&config_path),
        cfg,
        mode: cli.mode,
        oracle: cli.oracle,
    };
    match &cli.command {
        Command::TrainRef => commands::train_ref(&ctx, &mut run)?,
        Command::BuildStore => commands::build_store_cmd(&ctx, &mut run)?,
        Command::Estimate { perm, all_steps } => commands::estimate_cmd(&ctx, &mut run, perm, *all_steps)?,
        Command::Absdiff => commands::absdiff_cmd(&ctx, &mut run)?,
        Command::Curriculum { descending } => commands::curriculum_cmd(&ctx, &mut run, *descending)?,
        Command::Memgen => commands::memgen_cmd(&ctx, &mut run)?,
        Command::Timing => commands::timing_cmd(&ctx, &mut run)?,
    }
    let manifest = run.finish()?;
    log::info!("wrote {}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.record()).expect("error record serializes"));
            ExitCode::from(e.exit_code())
        }
    }
}
