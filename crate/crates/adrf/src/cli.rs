//! Command-line surface.

use std::path::PathBuf;

use adrf_core::{BasisFamily, GelCriterion};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "adrf", version, about = "Average dose-response estimation with a mismeasured continuous treatment")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the dose-response curve on a grid.
    Estimate(EstimateArgs),
    /// Undersmoothed pointwise confidence band.
    Ci(CiArgs),
    /// Choose (K, h0, h) by plug-in, GCV and SIMEX.
    Tune(TuneArgs),
    /// Monte Carlo study on the simulation designs.
    Simulate(SimulateArgs),
    /// Estimate the error characteristic function from replicate pairs.
    ReplicatePhi(ReplicatePhiArgs),
    /// Summarize the per-replication ISE file of a study.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ErrorKindArg {
    Laplace,
    Gaussian,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Et,
    El,
    Cue,
    Ilog,
}

impl From<CriterionArg> for GelCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Et => GelCriterion::ExponentialTilting,
            CriterionArg::El => GelCriterion::EmpiricalLikelihood,
            CriterionArg::Cue => GelCriterion::ContinuousUpdating,
            CriterionArg::Ilog => GelCriterion::InverseLogistic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Power,
    Bspline,
}

impl From<BasisArg> for BasisFamily {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Power => BasisFamily::PowerSeries,
            BasisArg::Bspline => BasisFamily::BSpline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Fig1,
}

/// Measurement-error declaration: either a parametric kind with a variance
/// (absolute or as a fraction of var(s)) or a descriptor file.
#[derive(Debug, Clone, Args)]
pub struct ErrorArgs {
    #[arg(long, value_enum)]
    pub error_kind: Option<ErrorKindArg>,
    #[arg(long)]
    pub error_variance: Option<f64>,
    /// Error variance as a fraction of the sample variance of s.
    #[arg(long)]
    pub error_ratio: Option<f64>,
    /// `error_model.json` written by `replicate-phi`.
    #[arg(long)]
    pub error_model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    #[arg(long, value_enum, default_value_t = CriterionArg::Et)]
    pub criterion: CriterionArg,
    #[arg(long, value_enum, default_value_t = BasisArg::Power)]
    pub basis: BasisArg,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with columns s, y, x1..xr.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub error: ErrorArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// SIMEX seed; overrides the settings file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file of SIMEX settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Fixed smoothing parameters; all three or none.
#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub h0: Option<f64>,
    #[arg(long)]
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = adrf_core::estimator::DEFAULT_GRID_N)]
    pub grid_n: usize,
    /// Grid limits; default is the 5%..95% sample range of s.
    #[arg(long, requires = "grid_max")]
    pub grid_min: Option<f64>,
    #[arg(long, requires = "grid_min")]
    pub grid_max: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Model ids 1..4.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<u8>>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    pub errors: Option<Vec<ErrorKindArg>>,
    /// Any of cm_tuned, cm_grid, nv_tuned, nv_grid, oracle_pi0.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub grid_n: Option<usize>,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// TOML file of SIMEX settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplicatePhiArgs {
    /// CSV with columns s1, s2.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// `ise.csv` written by `simulate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "out")]
    pub output_dir: PathBuf,
}
