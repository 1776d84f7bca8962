//! Command-line front end behind the `swbal` binary.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric or
//! convergence failure.

mod config;
mod data;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{parse_covariate_basis, parse_k1, parse_link, parse_loss, parse_variance, RunConfig};
pub use data::{load_csv, read_csv, write_dataset, ColumnRoles};
pub use report::{BalanceReport, EstimateReport, Reproducibility};

use crate::doseresponse::{fit_curve, grid};
use crate::error::Error;
use crate::model::Dataset;
use crate::pipeline::{estimate, estimate_weights};
use crate::simulate::{monte_carlo, write_csv, DgpSpec, Preset, SimEstimator};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Io(_) => "E_IO",
            CliError::Core(e) => e.code(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => e.exit_code(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "swbal", version, about = "Stabilized-weight estimation of treatment effects for continuous treatments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the effect-function coefficients and write a JSON report.
    Estimate(RunArgs),
    /// Estimate the dose-response curve on a grid and write it as CSV.
    Curve(RunArgs),
    /// Run a Monte Carlo experiment and write the summary table as CSV.
    Simulate(SimulateArgs),
    /// Solve for the balancing weights and report the balance residuals.
    BalanceCheck(RunArgs),
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config file (or a JSON config echo taken from a report).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    /// Comma-separated covariate columns (default: all other columns).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// mean | quantile:TAU | expectile:TAU
    #[arg(long)]
    loss: Option<String>,
    /// poly:D | levels:A,B,...
    #[arg(long)]
    link: Option<String>,
    /// k1:N
    #[arg(long)]
    treatment_basis: Option<String>,
    /// k2-degree:D[:interactions]
    #[arg(long)]
    covariate_basis: Option<String>,
    /// kernel | sandwich
    #[arg(long)]
    variance: Option<String>,
    #[arg(long)]
    bandwidth_scale: Option<f64>,
    /// Dual solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Dual solver iteration budget.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Confidence level.
    #[arg(long)]
    level: Option<f64>,
    /// Output file (default: standard output).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// DGP preset: 1, 2, NLT or NLY.
    #[arg(long)]
    dgp: Preset,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: SWBAL_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also fit with the true weights and report that row alongside.
    #[arg(long)]
    known_weights: bool,
    #[command(flatten)]
    run: RunArgs,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { cfg.$field = v.clone(); } )* };
        }
        overlay!(outcome, treatment, loss, link, treatment_basis, covariate_basis, variance, bandwidth_scale, tol, max_iter, level);
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if self.covariates.is_some() {
            cfg.covariates = self.covariates.clone();
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        Ok(cfg)
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("swbal: error[{}]: {e}", e.code());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Estimate(args) => estimate_command(&args.resolve()?),
        Command::Curve(args) => curve_command(&args.resolve()?),
        Command::BalanceCheck(args) => balance_check_command(&args.resolve()?),
        Command::Simulate(args) => simulate_command(&args),
    }
}

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Usage("no input data: pass --data or set `data`".into()))?;
    let roles = ColumnRoles {
        outcome: cfg.outcome.clone(),
        treatment: cfg.treatment.clone(),
        covariates: cfg.covariates.clone(),
    };
    Ok(load_csv(path, &roles)?)
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match output {
        Some(path) => {
            std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::Io(format!("cannot write output: {e}")))
        }
    }
}

fn emit_json<T: serde::Serialize>(output: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    emit(output, &bytes)
}

fn estimate_command(cfg: &RunConfig) -> Result<(), CliError> {
    let config = cfg.estimator()?;
    let data = load(cfg)?;
    let est = estimate(&data, &config)?;
    emit_json(cfg.output.as_deref(), &EstimateReport::new(&est, &config, cfg))
}

fn curve_command(cfg: &RunConfig) -> Result<(), CliError> {
    let config = cfg.estimator()?;
    let data = load(cfg)?;
    let weights = estimate_weights(&data, config.k1, &config.covariate_basis, &config.weights)?;
    let fit = fit_curve(&data, &weights.solution.weights, &weights.treatment_basis)?;
    let points = fit.report(&grid(data.treatments())?, config.level)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &points {
        w.serialize(p).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    emit(cfg.output.as_deref(), &bytes)
}

fn balance_check_command(cfg: &RunConfig) -> Result<(), CliError> {
    let config = cfg.estimator()?;
    let data = load(cfg)?;
    let weights = estimate_weights(&data, config.k1, &config.covariate_basis, &config.weights)?;
    emit_json(cfg.output.as_deref(), &BalanceReport::new(&data, &weights, cfg))
}

fn simulate_command(args: &SimulateArgs) -> Result<(), CliError> {
    let cfg = args.run.resolve()?;
    let config = cfg.estimator()?;
    let spec = DgpSpec { preset: args.dgp, rho: args.rho, n: args.n, seed: args.seed };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let mut estimators = vec![SimEstimator { label: "sw".into(), config: config.clone(), known_weights: false }];
    if args.known_weights {
        estimators.push(SimEstimator { label: "sw-true-weights".into(), config, known_weights: true });
    }
    let reports = monte_carlo(&spec, &estimators, args.reps, args.seed, args.threads)?;
    let mut bytes = Vec::new();
    write_csv(&reports, &mut bytes)?;
    for r in reports.iter().filter(|r| r.flagged) {
        eprintln!("swbal: warning: {} failed in {} of {} replications", r.estimator, r.failures, r.reps);
    }
    emit(cfg.output.as_deref(), &bytes)
}
