//! `sphereqv` — exact moments, simulation, estimation and Monte Carlo
//! experiments for quadratic variations of spherical Gaussian fields.
//!
//! Exit codes: 0 success, 1 numeric or I/O failure, 2 invalid flags or
//! configuration, 3 invariant failure under `experiment --strict`.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sphereqv", version, about, propagate_version = true)]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true, env = "SPHEREQV_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact mean, variance and normalized cumulants of V_{N,l}, with optional
    /// asymptotic counterparts.
    Moments(MomentsArgs),
    /// Draw replications of V_N and write one CSV row per replication.
    Simulate(SimulateArgs),
    /// Evaluate one of the C_l estimators or the Hurst estimator (JSON output).
    Estimate(EstimateArgs),
    /// Run a Monte Carlo experiment and write its JSON and CSV reports.
    Experiment(ExperimentArgs),
    /// Run the special-function invariant suite.
    SpecfunCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum RegimeArg {
    FixedEll,
    EllFaster,
    EllComparable,
    EllSlower,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    /// JSON file with any of the flags below (snake_case keys); flags win.
    #[arg(long, value_name = "PATH")]
    config: Option<std::path::PathBuf>,
    /// Spherical-harmonic degree l (dimensionless integer, >= 1).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    ell: Option<u32>,
    /// Number of grid increments N (dimensionless integer, >= 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Angular power C_l (non-negative real) [default: 1].
    #[arg(long)]
    cl: Option<f64>,
    /// Asymptotic regime whose formulas are printed next to the exact values.
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    /// Ratio c = l/N for the comparable regime [default: l/N].
    #[arg(long)]
    c: Option<f64>,
    /// Highest cumulant order, 2..=8 [default: 4].
    #[arg(long)]
    p_max: Option<usize>,
    /// Also write the table as CSV (quantity,value) to this path.
    #[arg(long, value_name = "PATH")]
    csv: Option<std::path::PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON sample spec: {"target": {...}, "n": N, "seed"?: u64, "replications"?: count}.
    #[arg(long, value_name = "PATH")]
    spec_file: std::path::PathBuf,
    /// Base seed (unsigned 64-bit integer); overrides the spec file.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications; overrides the spec file.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    reps: Option<u64>,
    /// Output CSV path (default: stdout).
    #[arg(long, value_name = "PATH")]
    out: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    /// Exactly unbiased estimator.
    Cl,
    /// Normalizer for N/l -> 0.
    Cl1,
    /// Normalizer 1 - J0(pi c/2) for l/N -> c.
    Cl2,
    /// Normalizer (pi^2/8)(l/N)^2 for l/N -> 0.
    Cl3,
    /// Mean of squared harmonic coefficients.
    Classical,
    /// Hurst index from two quadratic variations.
    Hurst,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// JSON file with any of the flags below (snake_case keys); flags win.
    #[arg(long, value_name = "PATH")]
    config: Option<std::path::PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<EstimateMode>,
    /// Observed quadratic variation V_{N,l} (non-negative real).
    #[arg(long)]
    v: Option<f64>,
    /// Degree l (dimensionless integer, >= 1).
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    ell: Option<u32>,
    /// Grid increments N (dimensionless integer, >= 1).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    /// Ratio c = l/N for cl2 [default: l/N].
    #[arg(long)]
    c: Option<f64>,
    /// Comma-separated 2l+1 real-basis harmonic coefficients (classical).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    coeffs: Option<Vec<f64>>,
    /// Quadratic variation at time t (hurst).
    #[arg(long, allow_hyphen_values = true)]
    v_t: Option<f64>,
    /// Quadratic variation at time s (hurst).
    #[arg(long, allow_hyphen_values = true)]
    v_s: Option<f64>,
    /// First observation time t (positive real, same units as s).
    #[arg(long)]
    t: Option<f64>,
    /// Second observation time s (positive real).
    #[arg(long)]
    s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: std::path::PathBuf,
    /// Output prefix for <prefix>.json and <prefix>.csv (overrides the config).
    #[arg(long, value_name = "PREFIX")]
    output: Option<String>,
    /// Base seed (unsigned 64-bit integer); overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 3 when an invariant check fails.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Moments(a) => commands::moments(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::SpecfunCheck => commands::specfun_check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
