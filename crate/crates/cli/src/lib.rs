//! `skewfit` command-line front end.
//!
//! Flags are resolved in the order command line, then `--config` file, then
//! built-in defaults. The config file holds `flag-name=value` lines whose
//! keys are the long flag names of the chosen subcommand.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{expand_config, parse_config};

#[derive(Debug, Parser)]
#[command(
    name = "skewfit",
    version,
    about = "Skew t mixture modelling: fitting, sampling, densities and benchmarks"
)]
pub struct Cli {
    /// File of `flag=value` lines supplying defaults for subcommand flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a finite mixture by EM and write the result as JSON.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Draw observations from a parameter file.
    #[command(args_override_self = true)]
    Sample(SampleArgs),
    /// Evaluate the density at the rows of a CSV file.
    #[command(args_override_self = true)]
    Density(DensityArgs),
    /// Draw skew terms and report the dimension of the directions they span.
    #[command(args_override_self = true)]
    Skewgeom(SkewgeomArgs),
    /// Compare model kinds over all variable subsets of a labelled dataset.
    #[command(args_override_self = true)]
    Benchmark(BenchmarkArgs),
}

/// EM and integration controls shared by `fit` and `benchmark`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct EmArgs {
    /// Number of seeded k-means starts.
    #[arg(long, default_value_t = 1)]
    pub starts: usize,
    /// Master seed; fit, start and lattice streams are derived from it.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Stop when an iteration gains less log-likelihood than this.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// EM iteration cap.
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Hold the degrees of freedom at this value (`inf` for the normal limit).
    #[arg(long)]
    pub nu_fixed: Option<String>,
    /// Lattice points per shift for latent dimensions without closed forms.
    #[arg(long, default_value_t = 256)]
    pub qmc_points: usize,
    /// Random lattice shifts.
    #[arg(long, default_value_t = 4)]
    pub qmc_shifts: usize,
    /// Largest latent dimension handled in closed form (at most 3).
    #[arg(long, default_value_t = 3)]
    pub exact_max_dim: usize,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    /// Input CSV with a header row.
    pub data: PathBuf,
    /// Class column, excluded from the features and used to score the clustering.
    #[arg(long)]
    pub label_col: Option<String>,
    /// Comma-separated feature columns; default is every numeric column.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Number of components.
    #[arg(long, default_value_t = 1)]
    pub g: usize,
    /// restricted, unrestricted, symmetric or cfust:q.
    #[arg(long, default_value = "restricted")]
    pub kind: String,
    /// Z-score the features before fitting.
    #[arg(long)]
    pub standardize: bool,
    #[command(flatten)]
    pub em: EmArgs,
    /// Output path; `-` writes to standard output.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    /// Component parameter JSON.
    pub params: PathBuf,
    /// Number of draws.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV; `-` writes to standard output.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DensityArgs {
    /// Component parameter JSON.
    pub params: PathBuf,
    /// CSV of evaluation points, one per row.
    pub points: PathBuf,
    /// Lattice points per shift for latent dimensions above three.
    #[arg(long, default_value_t = 1024)]
    pub qmc_points: usize,
    /// Random lattice shifts.
    #[arg(long, default_value_t = 8)]
    pub qmc_shifts: usize,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output CSV; `-` writes to standard output.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SkewgeomArgs {
    /// Component parameter JSON.
    pub params: PathBuf,
    /// Number of skew-term draws.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Relative singular-value cutoff for the rank.
    #[arg(long, default_value_t = 1e-8)]
    pub rank_tol: f64,
    /// Output CSV; `-` writes to standard output.
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchmarkArgs {
    /// Labelled input CSV.
    pub data: PathBuf,
    /// Class column holding the known grouping.
    #[arg(long)]
    pub label_col: String,
    /// Comma-separated feature columns; default is every numeric column.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// Smallest subset size.
    #[arg(long, default_value_t = 2)]
    pub min_size: usize,
    /// Defaults to the number of features.
    #[arg(long)]
    pub max_size: Option<usize>,
    /// Number of mixture components.
    #[arg(long, default_value_t = 2)]
    pub g: usize,
    /// Comma-separated model kinds.
    #[arg(long, value_delimiter = ',', default_value = "restricted,unrestricted")]
    pub kinds: Vec<String>,
    /// Log-likelihood gap below which a subset counts as a tie.
    #[arg(long, default_value_t = 1e-3)]
    pub tie_loglik: f64,
    /// BIC gap below which a subset counts as a tie.
    #[arg(long, default_value_t = 1e-3)]
    pub tie_bic: f64,
    /// Fit on the original scale instead of z-scores.
    #[arg(long)]
    pub raw_scale: bool,
    #[command(flatten)]
    pub em: EmArgs,
    /// csv or json.
    #[arg(long, default_value = "json")]
    pub format: String,
    /// Report path; progress is kept next to it until the run completes.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from the progress file left by an interrupted run.
    #[arg(long)]
    pub resume: bool,
}

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Input = 1,
    NotConverged = 2,
    Numerical = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Input,
            message: message.into(),
        }
    }
}

impl From<skewfit::Error> for Failure {
    fn from(e: skewfit::Error) -> Self {
        Self {
            exit: if e.is_numerical() {
                Exit::Numerical
            } else {
                Exit::Input
            },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::input(e.to_string())
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status. Errors are written to standard error as
/// `skewfit: error[<kind>]: <message>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(f) => return report(f),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Exit::Ok as i32;
            }
            let text = e.to_string();
            let detail: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.is_empty() && !l.starts_with("Usage:"))
                .collect();
            let detail = detail.join(" ");
            return report(Failure::input(format!(
                "usage: {}",
                detail.trim_start_matches("error: ")
            )));
        }
    };
    match commands::dispatch(cli.command) {
        Ok(exit) => exit as i32,
        Err(f) => report(f),
    }
}

fn report(f: Failure) -> i32 {
    let kind = match f.exit {
        Exit::Numerical => "numerical",
        Exit::NotConverged => "convergence",
        _ => "input",
    };
    eprintln!("skewfit: error[{kind}]: {}", f.message);
    f.exit as i32
}
