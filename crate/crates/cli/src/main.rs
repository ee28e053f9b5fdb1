//! `orcal`: odds-ratio estimation from survey samples with calibration on an
//! auxiliary variable.

mod commands;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use orcal::calibration::Strategy;

/// Exit status classes: 2 for bad input, 3 for estimation failures.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Estimation(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Estimation(m) => write!(f, "estimation error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "orcal", version, about = "Odds ratios from survey data with B-spline calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the odds ratio, its variance and confidence interval from a sample.
    Estimate(EstimateArgs),
    /// Monte Carlo study on a synthetic population.
    Simulate(SimulateArgs),
    /// Asymptotic variances and gains of the strategies on a full population.
    Compare(CompareArgs),
    /// Write a synthetic population as CSV.
    Population(PopulationArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DesignKind {
    Srswor,
}

#[derive(Args)]
pub struct EstimateArgs {
    /// Sample CSV with columns y, x and optionally z and pi.
    pub data: PathBuf,
    /// Population frame CSV with a z column.
    #[arg(long, conflicts_with = "totals")]
    pub frame: Option<PathBuf>,
    /// Totals file: basis totals on the first line, population size on the second.
    #[arg(long, requires = "knot_positions")]
    pub totals: Option<PathBuf>,
    /// Knot vector for --totals: lower boundary, interior knots, upper boundary.
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    pub knot_positions: Option<String>,
    /// Population total of z for linear GREG with --totals (derived from the
    /// basis totals when the degree is at least 2).
    #[arg(long, allow_hyphen_values = true)]
    pub z_total: Option<f64>,
    #[arg(long, value_enum, default_value = "srswor")]
    pub design: DesignKind,
    /// Population size N.
    #[arg(long)]
    pub pop_size: Option<usize>,
    /// Number of interior knots K.
    #[arg(long, default_value_t = 15)]
    pub knots: usize,
    /// Spline degree m (pieces have order m - 1).
    #[arg(long, default_value_t = 3)]
    pub degree: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Weighting strategy; repeat for several (HT, GREG, BSpline). Default: all.
    #[arg(long = "strategy", value_parser = parse_strategy)]
    pub strategies: Vec<Strategy>,
    /// Accepted for interface uniformity; estimation uses no randomness.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write B-spline evaluations on a grid of z values as CSV.
    #[arg(long)]
    pub dump_basis: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Spec file (JSON) or built-in name: labor-like, chis-like.
    pub spec: String,
    /// Seed of the replicate draws; overrides the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of replicates; overrides the spec.
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Population CSV with columns y, x, z.
    #[arg(required_unless_present = "builtin")]
    pub population: Option<PathBuf>,
    /// Use a built-in synthetic population instead of a file.
    #[arg(long, conflicts_with = "population")]
    pub builtin: Option<String>,
    /// Knot counts: a list (5,10,15), a range (5..50) or a stepped range (5..50:5).
    #[arg(long, default_value = "15")]
    pub knots: String,
    /// Degrees, same syntax as --knots.
    #[arg(long, default_value = "3")]
    pub degree: String,
    /// SRSWOR sample size n. Gains do not depend on it. Default: N / 20.
    #[arg(long)]
    pub sample_size: Option<usize>,
    /// Seed of a built-in population; overrides its default.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct PopulationArgs {
    /// Spec file (JSON) or built-in name.
    pub spec: String,
    /// Population seed; overrides the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::Population(a) => commands::population(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("orcal: {e}");
            ExitCode::from(e.code())
        }
    }
}
