//! `shrinkage-lab`: experiment runner for the shrinkage prediction library.
//!
//! ```text
//! shrinkage-lab <experiment> [--config PATH] [--seed U64] [--out DIR]
//!               [--paper-scale] [--workers N] [--intercept]
//! ```
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure in
//! selftest, 3 I/O error.

mod config;
mod experiments;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ExperimentConfig, ExperimentTag};
use experiments::RunContext;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    SelftestFailed(usize),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::SelftestFailed(n) => write!(f, "selftest failed: {n} check(s)"),
            CliError::Io(msg) => write!(f, "I/O error: {msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::SelftestFailed(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "shrinkage-lab",
    version,
    about = "Monte Carlo experiments for Bayesian shrinkage prediction under changeable covariances"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration; figure defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config; default `results`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restore the paper's 10^4 outer replications.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads; env SHRINKAGE_LAB_WORKERS is the fallback.
    #[arg(long)]
    workers: Option<usize>,
    /// Append a constant coordinate to every sample (intercept model).
    #[arg(long)]
    intercept: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fitted-line comparison across design seeds (figure 1/2 data).
    FitLines(CommonArgs),
    /// Predictive distribution samples at a fixed future point (figure 3).
    PredictiveCdf(CommonArgs),
    /// Risk improvement over the uniform prior across dimensions (figure 4).
    RiskCurve(CommonArgs),
    /// Absolute risks of several predictive densities (figure 5).
    CompareDensities(CommonArgs),
    /// Predictive-mean surface over future points (figure 6).
    AstarSurface(CommonArgs),
    /// Cross-module oracle suite; exits nonzero on any failure.
    Selftest(CommonArgs),
}

impl Command {
    fn tag(&self) -> ExperimentTag {
        match self {
            Command::FitLines(_) => ExperimentTag::FitLines,
            Command::PredictiveCdf(_) => ExperimentTag::PredictiveCdf,
            Command::RiskCurve(_) => ExperimentTag::RiskCurve,
            Command::CompareDensities(_) => ExperimentTag::CompareDensities,
            Command::AstarSurface(_) => ExperimentTag::AstarSurface,
            Command::Selftest(_) => ExperimentTag::Selftest,
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::FitLines(a)
            | Command::PredictiveCdf(a)
            | Command::RiskCurve(a)
            | Command::CompareDensities(a)
            | Command::AstarSurface(a)
            | Command::Selftest(a) => a,
        }
    }
}

fn load_config(args: &CommonArgs, tag: ExperimentTag) -> Result<ExperimentConfig, CliError> {
    let config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text).map_err(CliError::Config)?
        }
        None => ExperimentConfig::default(),
    };
    config.check_tag(tag).map_err(CliError::Config)?;
    Ok(config)
}

fn resolve_workers(args: &CommonArgs) -> usize {
    args.workers
        .or_else(|| {
            std::env::var("SHRINKAGE_LAB_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .filter(|&w| w > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let tag = cli.command.tag();
    let args = cli.command.args();
    let config = load_config(args, tag)?;
    let workers = resolve_workers(args);
    let ctx = RunContext {
        master_seed: args.seed.or(config.seed).unwrap_or(20_240_809),
        out_dir: args
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("results")),
        paper_scale: args.paper_scale,
        workers,
        intercept: args.intercept,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| match tag {
        ExperimentTag::FitLines => experiments::fit_lines::run(&config, &ctx),
        ExperimentTag::PredictiveCdf => experiments::predictive_cdf::run(&config, &ctx),
        ExperimentTag::RiskCurve => experiments::risk_curve::run(&config, &ctx),
        ExperimentTag::CompareDensities => experiments::compare_densities::run(&config, &ctx),
        ExperimentTag::AstarSurface => experiments::astar_surface::run(&config, &ctx),
        ExperimentTag::Selftest => experiments::selftest::run(&config, &ctx),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("shrinkage-lab: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
