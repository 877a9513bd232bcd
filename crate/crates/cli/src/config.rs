//! Flat TOML settings files. Keys are the long flag names with `-` replaced
//! by `_`; relative paths are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::args::{AnalyzeArgs, ImputerArgs, PropensityArgs, SimulateArgs, ToyPowerArgs};
use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub log_level: Option<String>,
    pub quiet: Option<bool>,
    pub threads: Option<usize>,

    pub outcomes: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub target: Option<String>,
    pub method: Option<String>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
    pub volcano: Option<PathBuf>,
    pub cross_fit: Option<usize>,
    pub variance: Option<String>,
    pub mask: Option<PathBuf>,
    pub missing_token: Option<String>,
    pub no_intercept: Option<bool>,
    pub oracle: Option<PathBuf>,
    pub external_nu: Option<PathBuf>,
    pub rate_threshold: Option<f64>,

    pub imputer: Option<String>,
    pub imputer_lambda: Option<f64>,
    pub imputer_rank: Option<usize>,
    pub imputer_k: Option<usize>,
    pub imputer_max_iter: Option<usize>,
    pub imputer_tol: Option<f64>,
    pub prop_tol: Option<f64>,
    pub prop_max_iter: Option<usize>,
    pub prop_clip: Option<f64>,

    pub preset: Option<String>,
    pub model: Option<u8>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub methods: Option<String>,
    pub cutoffs: Option<String>,
    pub signal_frac: Option<f64>,
    pub signal_c: Option<f64>,
    pub ar1: Option<f64>,
    pub cov_csv: Option<PathBuf>,
    pub mcar_prob: Option<f64>,
    pub skew_shift: Option<f64>,

    pub rho: Option<String>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.outcomes,
            &mut self.covariates,
            &mut self.out,
            &mut self.volcano,
            &mut self.mask,
            &mut self.oracle,
            &mut self.external_nu,
            &mut self.cov_csv,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

macro_rules! fill {
    ($args:expr, $file:expr; $($field:ident),* $(,)?) => {
        $( if $args.$field.is_none() { $args.$field = $file.$field.clone(); } )*
    };
}

fn fill_imputer(a: &mut ImputerArgs, f: &FileConfig) {
    fill!(a, f; imputer, imputer_lambda, imputer_rank, imputer_k, imputer_max_iter, imputer_tol);
}

fn fill_propensity(a: &mut PropensityArgs, f: &FileConfig) {
    fill!(a, f; prop_tol, prop_max_iter, prop_clip);
}

impl AnalyzeArgs {
    pub fn fill_from(&mut self, f: &FileConfig) {
        fill!(self, f; outcomes, covariates, target, method, alpha, out, volcano, cross_fit, variance,
              mask, missing_token, oracle, external_nu, rate_threshold);
        self.no_intercept |= f.no_intercept.unwrap_or(false);
        fill_imputer(&mut self.imputer, f);
        fill_propensity(&mut self.propensity, f);
    }
}

impl SimulateArgs {
    pub fn fill_from(&mut self, f: &FileConfig) {
        fill!(self, f; preset, model, n, p, reps, seed, methods, cutoffs, out, signal_frac, signal_c,
              ar1, cov_csv, mcar_prob, skew_shift, cross_fit, variance);
        fill_imputer(&mut self.imputer, f);
        fill_propensity(&mut self.propensity, f);
    }
}

impl ToyPowerArgs {
    pub fn fill_from(&mut self, f: &FileConfig) {
        fill!(self, f; rho, n, beta, delta, reps, seed, out);
    }
}
