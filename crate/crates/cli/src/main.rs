//! `kcontrast`: simulate point patterns, estimate K-functions, fit intensities by minimum
//! contrast, choose penalty radii, inspect residuals and run Monte Carlo studies.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

mod commands;
mod settings;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Compute(#[from] kcontrast::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Compute(_) => 2,
        }
    }
}

const AFTER_HELP: &str = "\
Every subcommand accepts --config FILE, a JSON object whose keys are the long flag names
with '-' replaced by '_'. Flags given on the command line override the file.

Exit status: 0 success, 1 usage or input error, 2 computation failure.";

#[derive(Parser, Debug)]
#[command(name = "kcontrast", version, about, after_help = AFTER_HELP, allow_negative_numbers = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a Poisson pattern; writes CSV `x,y[,t]`.
    Simulate(SimulateArgs),
    /// Estimate a K-function; writes CSV `r[,h],value` and a JSON sidecar next to it.
    Kest(KestArgs),
    /// Fit a log-linear intensity, optionally with a radial penalty; writes JSON.
    Fit(FitArgs),
    /// Fit a model at every point of the pattern; writes JSON.
    LocalFit(FitArgs),
    /// Choose the penalty radius; writes CSV `R,criterion,<params>` and a JSON summary next to it.
    SelectR(SelectRArgs),
    /// Smoothed residual field of a fitted model; writes CSV `x,y,residual,data,model`.
    Residuals(ResidualArgs),
    /// Monte Carlo study; writes raw.csv, summary.csv and report.json into a directory.
    McStudy(StudyArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct PatternArgs {
    /// Pattern CSV with header `x,y` or `x,y,t`.
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// Window `x0,x1,y0,y1[,t0,t1]`; the unit square or cube when omitted.
    #[arg(long, value_delimiter = ',')]
    pub window: Option<Vec<f64>>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct GridArgs {
    /// Number of spatial lags (default 153, or 15 for spatio-temporal patterns).
    #[arg(long)]
    pub n_r: Option<usize>,
    /// Number of temporal lags (default 15).
    #[arg(long)]
    pub n_h: Option<usize>,
    /// Lag weight φ.
    #[arg(long, value_enum)]
    pub phi: Option<Phi>,
    /// Full contrast configuration (config file only).
    #[arg(skip)]
    pub contrast: Option<kcontrast::ContrastConfig>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct OptimArgs {
    /// Seed for the optimizer restarts.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nelder-Mead runs per fit.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Skip the Hessian standard errors.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_se: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phi {
    Constant,
    InverseSquare,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// One of S1, S2, S3, ST1, ST2.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Model such as `exp(a+b*x)`, used instead of a scenario.
    #[arg(long)]
    pub model: Option<String>,
    /// Coefficients, comma separated; a scenario's own values when omitted.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Window `x0,x1,y0,y1[,t0,t1]` for --model.
    #[arg(long, value_delimiter = ',')]
    pub window: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Homogeneous,
    Inhomogeneous,
    LocalHomogeneous,
    LocalInhomogeneous,
    Theoretical,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct KestArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PatternArgs,
    /// Estimator (default: inhomogeneous when --model is given, else homogeneous).
    #[arg(long, value_enum)]
    pub estimator: Option<Estimator>,
    /// Point index for the local estimators.
    #[arg(long)]
    pub point: Option<usize>,
    /// Weighting intensity model, with --theta.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// CSV output; the sidecar is written with a `.json` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PatternArgs,
    /// Model such as `exp(a+b*x)`.
    #[arg(long)]
    pub model: Option<String>,
    /// Penalty radius R; unpenalized when omitted.
    #[arg(long = "penalty-R")]
    #[serde(rename = "penalty_R")]
    pub penalty_r: Option<f64>,
    /// Penalty weight (default 1/R²).
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// JSON output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Residual,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Absolute,
    Signed,
    IntegratedAbsolute,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct RGridArgs {
    /// Explicit radii, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub r_grid: Option<Vec<f64>>,
    /// Smallest radius of a log-spaced grid.
    #[arg(long)]
    pub r_min: Option<f64>,
    /// Largest radius of a log-spaced grid.
    #[arg(long)]
    pub r_max: Option<f64>,
    /// Number of radii in a log-spaced grid.
    #[arg(long)]
    pub r_count: Option<usize>,
    /// Residual criterion.
    #[arg(long, value_enum)]
    pub criterion: Option<Criterion>,
    /// Spatial kernel bandwidth (default: normal-scale rule).
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SelectRArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PatternArgs,
    #[arg(long)]
    pub model: Option<String>,
    /// Selection rule (default residual).
    #[arg(long, value_enum)]
    pub rule: Option<Rule>,
    /// True coefficients for the oracle rule.
    #[arg(long, value_delimiter = ',')]
    pub truth: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub radii: RGridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// CSV trace output; the JSON summary is written with a `.json` extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRuleArg {
    NormalScale,
    CvMse,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResidualArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PatternArgs,
    #[arg(long)]
    pub model: Option<String>,
    /// Fitted coefficients; the model is fitted (needs --seed) when omitted.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Penalty radius for the fit made when --theta is omitted.
    #[arg(long = "penalty-R")]
    #[serde(rename = "penalty_R")]
    pub penalty_r: Option<f64>,
    /// Spatial kernel bandwidth.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Bandwidth rule when --bandwidth is omitted (default normal-scale).
    #[arg(long, value_enum)]
    pub bandwidth_rule: Option<BandwidthRuleArg>,
    /// Cells per side of the evaluation grid (default 128).
    #[arg(long)]
    pub cells: Option<usize>,
    /// Turn off the kernel edge correction.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_edge_correction: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// CSV output; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Plan {
    Unpenalized,
    FixedR,
    OracleR,
    ResidualR,
    Local,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct StudyArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// One of S1, S2, S3, ST1, ST2.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Generating coefficients; the scenario's own when omitted.
    #[arg(long, value_delimiter = ',')]
    pub theta: Option<Vec<f64>>,
    /// Replicates (default 100).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Fit plan (default unpenalized).
    #[arg(long, value_enum)]
    pub plan: Option<Plan>,
    /// Radius for the fixed-r and local plans.
    #[arg(long = "penalty-R")]
    #[serde(rename = "penalty_R")]
    pub penalty_r: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub radii: RGridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub optim: OptimArgs,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    use settings::resolve;
    match cli.command {
        Command::Simulate(a) => commands::simulate(resolve(&a, a.config.as_deref())?),
        Command::Kest(a) => commands::kest(resolve(&a, a.config.as_deref())?),
        Command::Fit(a) => commands::fit(resolve(&a, a.config.as_deref())?),
        Command::LocalFit(a) => commands::local_fit(resolve(&a, a.config.as_deref())?),
        Command::SelectR(a) => commands::select_r(resolve(&a, a.config.as_deref())?),
        Command::Residuals(a) => commands::residuals(resolve(&a, a.config.as_deref())?),
        Command::McStudy(a) => commands::mc_study(resolve(&a, a.config.as_deref())?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
