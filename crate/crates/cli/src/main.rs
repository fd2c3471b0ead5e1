//! `scc`: measures the longest sequence a model can count reliably, plus the
//! companion assays and reports.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 failed preflight,
//! 1 anything else.

mod config;
mod ops;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use config::AssayChoice;

#[derive(Parser)]
#[command(
    name = "scc",
    version,
    about = "Stable counting capacity harness",
    subcommand_required = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure a configured endpoint: ladder, sweep, or task battery.
    Run(RunArgs),
    /// Print the guessing-floor statistics for a ladder configuration.
    VerifyBounds(VerifyArgs),
    /// Run the full pipeline against a synthetic oracle, deterministically.
    Simulate(RunArgs),
    /// Rebuild derived reports for a run, or correlate runs with a score sheet.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// TOML config file; command-line flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Model identifier.
    #[arg(long)]
    pub model: Option<String>,
    /// Provider preset: openai, openrouter, deepseek, together, local.
    #[arg(long)]
    pub provider: Option<String>,
    /// Which assay to run.
    #[arg(long, value_enum)]
    pub assay: Option<AssayChoice>,
    /// Master seed; every random stream in the run derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest tier center the ladder may probe.
    #[arg(long)]
    pub max_length: Option<u64>,
    /// Root directory run output goes under.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Synthetic stand-in for the model: saturating:500, attractor:26,
    /// guesser[:alpha], cap-exhausted, nested-saturating:416,
    /// dual-load:500,150, agent-ops[:count,copy[,fail-above]].
    #[arg(long, value_name = "SPEC")]
    pub oracle: Option<String>,
    /// Concurrent requests.
    #[arg(long)]
    pub parallelism: Option<u32>,
    /// Run label; the run id derives from it and the seed.
    #[arg(long)]
    pub label: Option<String>,
    /// First target of a sweep.
    #[arg(long)]
    pub sweep_from: Option<u64>,
    /// Last target of a sweep.
    #[arg(long)]
    pub sweep_to: Option<u64>,
    /// Reopen an interrupted ladder run and continue from its checkpoints.
    #[arg(long)]
    pub resume: bool,
}

impl RunArgs {
    fn overrides(&self) -> config::Overrides {
        config::Overrides {
            model: self.model.clone(),
            provider: self.provider.clone(),
            assay: self.assay,
            seed: self.seed,
            max_length: self.max_length,
            out: self.out.clone(),
            oracle: self.oracle.clone(),
            parallelism: self.parallelism,
            label: self.label.clone(),
            sweep_from: self.sweep_from,
            sweep_to: self.sweep_to,
        }
    }
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// TOML config file; its [ladder] section seeds the defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Jitter half-width.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Trials per tier.
    #[arg(long)]
    pub trials: Option<u32>,
    /// Stability threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Monte Carlo batches to simulate.
    #[arg(long, default_value_t = 1_000_000)]
    pub batches: u64,
    /// Seed for the simulation streams.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directory, or a run id resolved under --out.
    pub run: Option<String>,
    /// Root directory runs live under.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
    /// CSV score sheet (columns: model,score); correlates capacity with
    /// scores across every finished run under --out.
    #[arg(long, value_name = "FILE")]
    pub scores_file: Option<PathBuf>,
}

/// An error carrying the process exit code it should produce.
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }

    pub fn preflight(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 3, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => ops::cmd_run(&args, false),
        Command::Simulate(args) => ops::cmd_run(&args, true),
        Command::VerifyBounds(args) => ops::cmd_verify_bounds(&args),
        Command::Report(args) => ops::cmd_report(&args),
    };
    if let Err(failure) = result {
        eprintln!("error: {:#}", failure.error);
        std::process::exit(failure.code);
    }
}
