//! Synthetic case–control data with missing outcomes, a benchmark harness
//! over the compared estimators, and the one-dimensional power experiment.

mod bench;
mod generate;
mod toy;

use std::path::Path;

use nalgebra::DMatrix;

use crate::data::read_numeric_table;
use crate::error::{Error, Result};
use crate::imputers::ImputerConfig;
use crate::propensity::PropensityConfig;
use crate::inference::VarianceMode;

pub use bench::{run_benchmark, run_rep, write_bench_csv, write_bench_csv_file, BenchResult, MethodSummary, RepOutcome};
pub use generate::{gen_dataset, gen_noise, oracle_conditional_mean, true_propensity, NoiseSampler, SimTruth};
pub use toy::{toy_power_experiment, write_power_csv, PowerRow};

/// Noise covariance across peptides.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseCov {
    /// `Sigma_jk = rho^|j - k|`.
    Ar1(f64),
    /// Any symmetric positive definite p×p matrix.
    Matrix(DMatrix<f64>),
}

impl NoiseCov {
    pub fn covariance(&self, p: usize) -> DMatrix<f64> {
        match self {
            NoiseCov::Ar1(rho) => DMatrix::from_fn(p, p, |j, k| rho.powi((j as i32 - k as i32).abs())),
            NoiseCov::Matrix(m) => m.clone(),
        }
    }
}

/// Read a square covariance matrix from CSV (a header row is required).
pub fn load_covariance(path: &Path) -> Result<DMatrix<f64>> {
    let table = read_numeric_table(path)?;
    let m = table.values;
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!("covariance is {}×{}, expected square", m.nrows(), m.ncols())));
    }
    if (&m - m.transpose()).amax() > 1e-10 * (1.0 + m.amax()) {
        return Err(Error::InvalidArgument("covariance matrix is not symmetric".into()));
    }
    Ok(m)
}

/// Simulation settings. Models 1–4:
///
/// | model | mean of `y_ij`        | missingness |
/// |-------|-----------------------|-------------|
/// | 1     | `c s_j a_i`           | MCAR        |
/// | 2     | `x_i + c s_j a_i`     | MCAR        |
/// | 3     | `x_i + c s_j a_i`     | MAR on `x`  |
/// | 4     | as 3, skewed noise    | MAR on `x`  |
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: u8,
    pub n: usize,
    pub p: usize,
    pub signal_frac: f64,
    /// `None` picks the sample-size default, see [`SimConfig::signal_strength`].
    pub signal_c: Option<f64>,
    pub noise_cov: NoiseCov,
    pub mcar_prob: f64,
    /// Column minimum after the shift that precedes the log in Model 4.
    pub skew_shift: f64,
    pub seed: u64,
    pub reps: usize,
    pub cutoffs: Vec<f64>,
    pub imputer: ImputerConfig,
    pub propensity: PropensityConfig,
    pub variance: Option<VarianceMode>,
    /// Cross-fit the doubly robust nuisances over this many folds instead of
    /// reusing the analysed rows.
    pub cross_fit: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::desk(3)
    }
}

impl SimConfig {
    /// n = 200, p = 300, AR(1) noise with rho 0.5, 100 repetitions.
    pub fn desk(model: u8) -> Self {
        Self {
            model,
            n: 200,
            p: 300,
            signal_frac: 0.1,
            signal_c: None,
            noise_cov: NoiseCov::Ar1(0.5),
            mcar_prob: 0.3,
            skew_shift: 0.1,
            seed: 7,
            reps: 100,
            cutoffs: vec![0.05, 0.1, 0.2],
            imputer: ImputerConfig::default(),
            propensity: PropensityConfig::default(),
            variance: None,
            cross_fit: None,
        }
    }

    /// p = 1000 and 200 repetitions.
    pub fn full_scale(model: u8, n: usize) -> Self {
        Self {
            n,
            p: 1000,
            reps: 200,
            ..Self::desk(model)
        }
    }

    /// Desk scale with unit signal coefficient.
    pub fn strong_signal(model: u8) -> Self {
        Self {
            signal_c: Some(1.0),
            ..Self::desk(model)
        }
    }

    /// Named presets: `desk`, `full-n200`, `full-n500`, `strong-signal`.
    pub fn preset(name: &str, model: u8) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk(model)),
            "full-n200" => Ok(Self::full_scale(model, 200)),
            "full-n500" => Ok(Self::full_scale(model, 500)),
            "strong-signal" => Ok(Self::strong_signal(model)),
            other => Err(Error::InvalidArgument(format!("unknown preset '{other}'"))),
        }
    }

    /// Signal coefficient: the override if set, otherwise 0.4 (Models 1–3) or
    /// 0.12 (Model 4) for n up to 350, and 0.3 or 0.08 above.
    pub fn signal_strength(&self) -> f64 {
        self.signal_c.unwrap_or(match (self.model, self.n <= 350) {
            (4, true) => 0.12,
            (4, false) => 0.08,
            (_, true) => 0.4,
            (_, false) => 0.3,
        })
    }

    pub fn n_signals(&self) -> usize {
        (self.signal_frac * self.p as f64).round() as usize
    }

    pub fn is_mar(&self) -> bool {
        self.model >= 3
    }

    /// Covariate names of the generated design; the tested one is `"a"`.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut names = vec![crate::data::INTERCEPT_NAME.to_string()];
        if self.model != 1 {
            names.push("x".into());
        }
        names.push("a".into());
        names
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(1..=4).contains(&self.model) {
            return bad(format!("model must be 1–4, got {}", self.model));
        }
        if !(0.0..=1.0).contains(&self.signal_frac) {
            return bad(format!("signal fraction {} outside [0, 1]", self.signal_frac));
        }
        if !(0.0..1.0).contains(&self.mcar_prob) {
            return bad(format!("MCAR probability {} outside [0, 1)", self.mcar_prob));
        }
        if !(self.skew_shift > 0.0) {
            return bad(format!("skew shift must be positive, got {}", self.skew_shift));
        }
        let q = self.covariate_names().len();
        if self.n <= q + 1 || self.p == 0 {
            return bad(format!("need n > {} and p > 0, got n = {}, p = {}", q + 1, self.n, self.p));
        }
        if self.cutoffs.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return bad("cutoffs must lie in (0, 1)".into());
        }
        if let Some(k) = self.cross_fit {
            if k < 2 || self.n / k <= q {
                return bad(format!("{k} folds of {} samples are too small", self.n));
            }
        }
        match &self.noise_cov {
            NoiseCov::Ar1(rho) if !(rho.abs() < 1.0) => bad(format!("AR(1) rho {rho} outside (-1, 1)")),
            NoiseCov::Matrix(m) if m.shape() != (self.p, self.p) => {
                bad(format!("covariance is {}×{}, p = {}", m.nrows(), m.ncols(), self.p))
            }
            _ => Ok(()),
        }
    }
}
