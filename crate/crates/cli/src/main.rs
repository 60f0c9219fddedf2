//! `rangequant`: batch driver for the volatility quantile pipeline.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 1 on stage failures.

mod config;
mod manifest;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, DataConfig};
use pipeline::{Ctx, Stage};

#[derive(Parser)]
#[command(name = "rangequant", version, about = "Range-based volatility quantile pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate intraday prices and daily index series.
    Simulate(RunArgs),
    /// Realized estimators, the aligned daily panel and the design matrices.
    Estimate(RunArgs),
    /// Full-sample quantile fits with bootstrap inference.
    Fit(RunArgs),
    /// Rolling-window quantile fits.
    Roll(RunArgs),
    /// Rolling density forecasts of both models.
    Forecast(RunArgs),
    /// Forecast evaluation from persisted scores.
    Evaluate(RunArgs),
    /// Report tables from persisted stage outputs.
    Report(RunArgs),
    /// Every stage in order.
    All(RunArgs),
    /// Print the JSON schema of the configuration file.
    Schema,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Config(ConfigError),
    Stage(Stage, anyhow::Error),
    Io(anyhow::Error),
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var("RANGEQUANT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| ConfigError::new("RANGEQUANT_THREADS", format!("`{raw}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError::new("RANGEQUANT_THREADS", e.to_string()))
}

fn run_stages(args: &RunArgs, stages: &[Stage]) -> Result<(), Failure> {
    configure_threads().map_err(Failure::Config)?;
    let loaded = config::load(&args.config).map_err(Failure::Config)?;
    let out = args.out.clone().unwrap_or_else(|| loaded.config.output_dir.clone());
    let ctx = Ctx::new(loaded.config, out.clone());
    for &stage in stages {
        let start = Instant::now();
        let result = pipeline::run_stage(&ctx, stage);
        let outputs = ctx.take_written();
        let (status, error, seeds) = match &result {
            Ok(seeds) => ("ok", None, seeds.clone()),
            Err(e) => ("failed", Some(format!("{e:#}")), None),
        };
        manifest::record(
            &out,
            &loaded.as_written,
            manifest::StageRecord {
                stage: stage.name().into(),
                version: manifest::VERSION.into(),
                status: status.into(),
                error,
                seeds,
                outputs,
            },
        )
        .map_err(Failure::Io)?;
        manifest::record_timing(&out, stage, start.elapsed().as_secs_f64()).map_err(Failure::Io)?;
        if let Err(e) = result {
            return Err(match e.downcast::<ConfigError>() {
                Ok(c) => Failure::Config(c),
                Err(e) => Failure::Stage(stage, e),
            });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Schema => {
            println!("{}", config::schema_json());
            Ok(())
        }
        Command::Simulate(a) => run_stages(a, &[Stage::Simulate]),
        Command::Estimate(a) => run_stages(a, &[Stage::Estimate]),
        Command::Fit(a) => run_stages(a, &[Stage::Fit]),
        Command::Roll(a) => run_stages(a, &[Stage::Roll]),
        Command::Forecast(a) => run_stages(a, &[Stage::Forecast]),
        Command::Evaluate(a) => run_stages(a, &[Stage::Evaluate]),
        Command::Report(a) => run_stages(a, &[Stage::Report]),
        Command::All(a) => {
            let simulated = config::load(&a.config)
                .map(|l| matches!(l.config.data, DataConfig::Simulate { .. }))
                .unwrap_or(true);
            let stages: Vec<Stage> = Stage::ALL
                .into_iter()
                .filter(|s| simulated || *s != Stage::Simulate)
                .collect();
            run_stages(a, &stages)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(stage, e)) => {
            eprintln!("error: stage `{}` failed: {e:#}", stage.name());
            ExitCode::from(1)
        }
        Err(Failure::Io(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
