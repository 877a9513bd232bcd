//! Command-line surface. Every setting is optional here so that values from
//! a config file can fill whatever was not given on the command line.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "drpi", version, about = "Doubly robust post-imputation inference for matrices with missing outcomes")]
pub struct Cli {
    /// TOML file of `key = value` settings; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Log level on standard error: error, warn, info, debug or trace.
    #[arg(long, global = true, value_name = "LEVEL")]
    pub log_level: Option<String>,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test one covariate against every outcome column.
    Analyze(AnalyzeArgs),
    /// Run the FDR/TPR benchmark on simulated data.
    Simulate(SimulateArgs),
    /// Power of the W and UW pseudo-outcomes across auxiliary correlations.
    ToyPower(ToyPowerArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ImputerArgs {
    /// mean, lowdim, soft, knn, knn2 or external.
    #[arg(long)]
    pub imputer: Option<String>,
    /// Absolute soft-impute penalty.
    #[arg(long)]
    pub imputer_lambda: Option<f64>,
    /// Maximum soft-impute rank.
    #[arg(long)]
    pub imputer_rank: Option<usize>,
    /// Neighbours for the kNN imputers.
    #[arg(long)]
    pub imputer_k: Option<usize>,
    #[arg(long)]
    pub imputer_max_iter: Option<usize>,
    #[arg(long)]
    pub imputer_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PropensityArgs {
    #[arg(long)]
    pub prop_tol: Option<f64>,
    #[arg(long)]
    pub prop_max_iter: Option<usize>,
    /// Lower bound on fitted observation probabilities.
    #[arg(long)]
    pub prop_clip: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    /// Outcome CSV: one column per peptide, one row per sample.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
    /// Covariate CSV with the same rows.
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    /// Covariate to test.
    #[arg(long)]
    pub target: Option<String>,
    /// full, complete, plugin, plugin_missing, dr_w or dr_uw.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Results CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write volcano-plot data here.
    #[arg(long)]
    pub volcano: Option<PathBuf>,
    /// Cross-fit the nuisances over K folds.
    #[arg(long, value_name = "K")]
    pub cross_fit: Option<usize>,
    /// sandwich or homoskedastic.
    #[arg(long)]
    pub variance: Option<String>,
    /// 0/1 CSV marking observed cells.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Cell content read as missing, besides empty cells.
    #[arg(long)]
    pub missing_token: Option<String>,
    /// Do not add an intercept column to the covariates.
    #[arg(long)]
    pub no_intercept: bool,
    /// Complete outcome matrix, required by the `full` method.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Fitted conditional means for `--imputer external`.
    #[arg(long)]
    pub external_nu: Option<PathBuf>,
    /// Only test columns observed at least this often.
    #[arg(long)]
    pub rate_threshold: Option<f64>,
    #[command(flatten)]
    pub imputer: ImputerArgs,
    #[command(flatten)]
    pub propensity: PropensityArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// desk, full-n200, full-n500 or strong-signal.
    #[arg(long)]
    pub preset: Option<String>,
    /// Data-generating model, 1 to 4.
    #[arg(long)]
    pub model: Option<u8>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated method names.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated FDR cutoffs.
    #[arg(long)]
    pub cutoffs: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub signal_frac: Option<f64>,
    /// Signal coefficient; defaults depend on the model and n.
    #[arg(long)]
    pub signal_c: Option<f64>,
    /// AR(1) noise correlation.
    #[arg(long)]
    pub ar1: Option<f64>,
    /// Noise covariance CSV (p×p, with header), replacing AR(1).
    #[arg(long)]
    pub cov_csv: Option<PathBuf>,
    #[arg(long)]
    pub mcar_prob: Option<f64>,
    /// Column minimum before the log in Model 4.
    #[arg(long)]
    pub skew_shift: Option<f64>,
    #[arg(long, value_name = "K")]
    pub cross_fit: Option<usize>,
    #[arg(long)]
    pub variance: Option<String>,
    #[command(flatten)]
    pub imputer: ImputerArgs,
    #[command(flatten)]
    pub propensity: PropensityArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ToyPowerArgs {
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
