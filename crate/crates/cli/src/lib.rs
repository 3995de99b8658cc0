//! `eqcov` command-line driver: simulate data, fit the quantile model,
//! calibrate, evaluate, compare methods and sweep the bin count, writing
//! reproducible artifacts and a manifest into an output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
mod tables;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{DomainArg, Reals};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "eqcov",
    version,
    about = "Group-fair conformal calibration of quantile regression intervals"
)]
pub struct Cli {
    /// Report failures as a single JSON object on stderr.
    #[arg(long, global = true)]
    pub error_json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic population and write train/cal/test CSVs.
    Simulate(SimulateArgs),
    /// Fit the linear multi-quantile model on a training CSV.
    Fit(FitArgs),
    /// Calibrate one method and write its threshold artifact.
    Calibrate(CalibrateArgs),
    /// Score a threshold artifact on a test CSV.
    Evaluate(EvaluateArgs),
    /// Calibrate and evaluate several methods side by side.
    Compare(CompareArgs),
    /// Evaluate fuq for a range of bin counts on a held-out half of the calibration set.
    #[command(name = "sweep-m")]
    SweepM(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// `key = value` settings file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for artifacts and `manifest.json` (default: current directory).
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Column holding the integer group id.
    #[arg(long)]
    pub attribute_col: Option<String>,
    /// Label range as `min,max` (default 0,63).
    #[arg(long)]
    pub label_domain: Option<DomainArg>,
    /// Optional `group,name` sidecar declaring the groups.
    #[arg(long)]
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrationArgs {
    /// Miscoverage rate (default 0.1).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of equal-mass label bins for fuq (default 4).
    #[arg(long)]
    pub bins: Option<usize>,
    /// Group coverage weighting: cell_conformal, sample_mean or bin_mean.
    #[arg(long)]
    pub weighting: Option<String>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stop the optimizer at the first slope crossover.
    #[arg(long)]
    pub slope_crossover: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of records (default 10000).
    #[arg(long)]
    pub n: Option<usize>,
    /// Group proportions, e.g. `0.5,0.5`.
    #[arg(long)]
    pub group_probs: Option<Reals>,
    /// Noise standard deviation per group, e.g. `1,2`.
    #[arg(long)]
    pub noise_scale: Option<Reals>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub signal_scale: Option<f64>,
    #[arg(long)]
    pub label_domain: Option<DomainArg>,
    /// Train/cal/test fractions (default 0.2,0.4,0.4).
    #[arg(long)]
    pub split: Option<Reals>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fit the 99-level grid instead of the three levels calibration needs.
    #[arg(long)]
    pub levels99: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    /// Model JSON; without it the CSV must carry `q_lo`/`q_hi` columns.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub cal: Option<PathBuf>,
    /// cp, cqr, cqr_groupwise or fuq (default fuq).
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub cal: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Comma-separated methods (default cp,cqr,cqr_groupwise,fuq).
    #[arg(long)]
    pub methods: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub calibration: CalibrationArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub cal: Option<PathBuf>,
    /// Smallest bin count (default 1).
    #[arg(long)]
    pub min_bins: Option<usize>,
    /// Largest bin count (default 8).
    #[arg(long)]
    pub max_bins: Option<usize>,
}

pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Compare(a) => commands::compare(a),
        Command::SweepM(a) => commands::sweep_m(a),
    }
}

/// Parses `args`, runs the command and maps failures to exit codes:
/// 0 success, 1 validation, 2 numerical.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let wants_json = args.iter().any(|a| a == "--error-json");
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string());
            if wants_json {
                eprintln!("{}", err.to_json());
            } else {
                let _ = e.print();
            }
            return ExitCode::from(err.exit_code());
        }
    };
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            if cli.error_json {
                eprintln!("{}", err.to_json());
            } else {
                eprintln!("error: {err}");
            }
            ExitCode::from(err.exit_code())
        }
    }
}
