// SPDX-License-Identifier: MIT OR Apache-2.0

//! `lsdetect`: label-shift changepoint detection from the command line.
//!
//! Exit codes: 0 when `detect` raises an alarm (and for every other command
//! that succeeds), 2 when `detect` reaches the end of the stream without an
//! alarm, 1 for usage, validation and runtime errors.

mod commands;
mod config;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "lsdetect", version, about = "Detect changes in class prevalence from classifier scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a detector over a CSV stream of scores or features.
    Detect(commands::DetectArgs),
    /// Find the threshold that gives a target ARL for a scenario preset.
    Calibrate(commands::CalibrateArgs),
    /// Write a simulated stream from a scenario preset as CSV.
    Simulate(commands::SimulateArgs),
    /// Rerun a comparison table at a given replication budget.
    Reproduce(commands::ReproduceArgs),
    /// Solve the renewal integral equation for a Gaussian mean shift.
    Fredholm(commands::FredholmArgs),
}

/// Options shared by every subcommand.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the command's report (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo replications.
    #[arg(long)]
    pub reps: Option<u64>,
    /// Truncation point of simulated run lengths.
    #[arg(long)]
    pub cap: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rule {
    Cusum,
    Sr,
    Mixture,
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Rule as ValueEnum>::from_str(s, true)
    }
}

/// Detector and ratio parameters.
#[derive(Debug, Args, Clone, Default)]
pub struct DetectorArgs {
    #[arg(long)]
    pub rule: Option<Rule>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Pre-change class-1 prevalence.
    #[arg(long)]
    pub pi_inf: Option<f64>,
    /// Post-change class-1 prevalence.
    #[arg(long)]
    pub pi0: Option<f64>,
    /// Mixture detector: lower end of the candidate prevalences.
    #[arg(long)]
    pub pi0_min: Option<f64>,
    /// Mixture detector: upper end of the candidate prevalences.
    #[arg(long)]
    pub pi0_max: Option<f64>,
    /// Mixture detector: window length.
    #[arg(long)]
    pub window: Option<usize>,
    /// Mixture detector: number of midpoint nodes.
    #[arg(long)]
    pub n_quad: Option<usize>,
    /// Mixture detector: `uniform` or a single prevalence for a point mass.
    #[arg(long)]
    pub weight: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Detect(a) => commands::detect(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Reproduce(a) => commands::reproduce(&a),
        Command::Fredholm(a) => commands::fredholm(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
