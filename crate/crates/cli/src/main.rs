//! dpaudit: empirical auditing of differentially private mechanisms.
//!
//! Exit codes: 0 success / claim consistent, 1 error, 2 claim violated.

mod commands;
mod manifest;
mod pipeline;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dpaudit",
    version,
    about = "Audit differentially private mechanisms from attack observations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate observations from a closed-form mechanism.
    Simulate(SimulateArgs),
    /// Train a tiny model with DP-SGD and record canary observations.
    Train(TrainArgs),
    /// Compute a privacy lower bound from an observation file.
    Audit(AuditArgs),
    /// Check a claimed epsilon against the audited lower bound.
    Verify(VerifyArgs),
    /// Emit the empirical threshold/alpha/beta curve.
    Sweep(SweepArgs),
    /// Emit a trade-off curve as CSV.
    Tradeoff(TradeoffArgs),
    /// Query the PLD accountant.
    Accountant(AccountantArgs),
    /// Compose a per-step GDP bound into an end-to-end epsilon.
    Compose(ComposeArgs),
    /// Run a multi-stage experiment from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// gaussian | subsampled | rr
    #[arg(long)]
    pub mechanism: String,
    /// Noise multiplier (gaussian, subsampled).
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Sampling rate (subsampled).
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    /// Epsilon (rr).
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    /// Observations per world.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV (defaults to observations.csv in the output dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// logistic | mlp
    #[arg(long, default_value = "logistic")]
    pub task: String,
    /// Training-set size.
    #[arg(long, default_value_t = 400)]
    pub data_size: usize,
    /// Input dimension (logistic task).
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    /// Batch sampling rate.
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    #[arg(long, default_value_t = 0.02)]
    pub eta: f64,
    /// Noise multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Clip norm C.
    #[arg(long, default_value_t = 10.0)]
    pub clip: f64,
    /// Iterations per training run.
    #[arg(long, default_value_t = 1000)]
    pub steps: u32,
    /// Observation pairs to collect (white-box) or per world (black-box).
    #[arg(long, default_value_t = 1000)]
    pub observations: usize,
    /// Canary sampling rate.
    #[arg(long, default_value_t = 1.0)]
    pub qc: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// dirac | constant | random | mislabeled | blank | crafted
    #[arg(long, default_value = "dirac")]
    pub canary: String,
    /// static | per-step
    #[arg(long, default_value = "static")]
    pub canary_refresh: String,
    /// whitebox | blackbox
    #[arg(long, default_value = "whitebox")]
    pub mode: String,
    /// Model pairs to train in black-box mode.
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// none | clip-after-avg | biased-noise:K | noise-scale:S
    #[arg(long, default_value = "none")]
    pub bug: String,
    /// Keep only observations from steps in [LO, HI) of each run, e.g. 0:250.
    #[arg(long)]
    pub obs_window: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub observations: PathBuf,
    /// fdp-cp | fdp-zb | dp-cp | dp-zb | katz
    #[arg(long)]
    pub method: String,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Confidence level 1 - gamma.
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
    /// Fixed decision threshold.
    #[arg(long, conflicts_with = "sweep")]
    pub threshold: Option<f64>,
    /// Maximize the bound over a threshold sweep (exploratory unless a
    /// holdout fraction is given).
    #[arg(long)]
    pub sweep: bool,
    /// Pick the threshold on this fraction of the data, bound on the rest.
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// Sampling rate of the audited mechanism.
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    /// Steps to compose the per-step bound over.
    #[arg(long, default_value_t = 1)]
    pub steps: u32,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub audit: AuditArgs,
    /// The epsilon the implementation claims at the audit delta.
    #[arg(long)]
    pub claimed_eps: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    /// eps-delta | gdp | pld-approx
    #[arg(long)]
    pub family: String,
    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Accountant parameters (pld-approx).
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1)]
    pub steps: u32,
    /// Supporting lines for pld-approx.
    #[arg(long, default_value_t = 100)]
    pub lines: usize,
    /// min (conservative envelope) | max (tighter, recommended for audits)
    #[arg(long, default_value = "min")]
    pub combiner: String,
    /// Samples along alpha.
    #[arg(long, default_value_t = 513)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AccountantArgs {
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1)]
    pub steps: u32,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// Also emit (delta', eps) samples as CSV for curve approximation.
    #[arg(long)]
    pub curve: bool,
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Audited per-step GDP lower bound.
    #[arg(long)]
    pub mu_step: f64,
    #[arg(long)]
    pub steps: u32,
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// TOML experiment description.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the configured output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for within-stage parallelism (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Default directory for outputs when --out is not given.
pub fn output_dir() -> PathBuf {
    std::env::var_os("DPAUDIT_OUTPUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_ERROR,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
