//! Pseudo-outcomes, per-peptide least squares and the compared estimators.

use std::fmt;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{filter_by_rate, Dataset, MethodKind, PeptideInference, DEFAULT_FEED_THRESHOLD};
use crate::error::{Error, Result};
use crate::imputers::{impute, impute_out_of_fold, ImputerBackend, ImputerConfig};
use crate::linalg::{select_rows, spd_inverse};
use crate::propensity::{fit_logistic, PropensityConfig};
use crate::stats::{normal_two_sided, student_two_sided};
use crate::testing::{adjust_and_select, SelectionResult};

/// Covariance estimator for the least-squares coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    /// HC0 plug-in sandwich; tested against the normal distribution.
    Sandwich,
    /// `sigma^2 (W'W)^-1`; tested against Student-t with `n - q` df.
    Homoskedastic,
}

impl VarianceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceMode::Sandwich => "sandwich",
            VarianceMode::Homoskedastic => "homoskedastic",
        }
    }

    /// Default for each estimator: sandwich for the doubly robust ones.
    pub fn default_for(method: MethodKind) -> Self {
        if method.is_doubly_robust() {
            VarianceMode::Sandwich
        } else {
            VarianceMode::Homoskedastic
        }
    }
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sandwich" | "hc0" => Ok(VarianceMode::Sandwich),
            "homoskedastic" | "ols" => Ok(VarianceMode::Homoskedastic),
            other => Err(Error::InvalidArgument(format!("unknown variance mode '{other}'"))),
        }
    }
}

/// Inverse-weighted outcome for one peptide.
#[derive(Debug, Clone)]
pub struct PseudoOutcome {
    pub y_tilde: DVector<f64>,
    pub method: MethodKind,
    /// `C_i / delta_i`.
    pub weights_used: DVector<f64>,
}

/// `y~_i = (C_i/delta_i) y_i + (1 - C_i/delta_i) nu_i`.
///
/// `y_i` is read only where `c_i` is set, so masked entries may hold anything.
pub fn pseudo_outcomes(y: &[f64], c: &[bool], delta_hat: &[f64], nu_hat: &[f64]) -> Result<PseudoOutcome> {
    let n = y.len();
    if c.len() != n || delta_hat.len() != n || nu_hat.len() != n {
        return Err(Error::Shape("pseudo-outcome inputs differ in length".into()));
    }
    let mut y_tilde = DVector::zeros(n);
    let mut weights = DVector::zeros(n);
    for i in 0..n {
        let delta = delta_hat[i];
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidArgument(format!("propensity {delta} at row {i} outside (0, 1]")));
        }
        if c[i] {
            let w = 1.0 / delta;
            weights[i] = w;
            y_tilde[i] = w * y[i] + (1.0 - w) * nu_hat[i];
        } else {
            y_tilde[i] = nu_hat[i];
        }
    }
    Ok(PseudoOutcome {
        y_tilde,
        method: MethodKind::DrUw,
        weights_used: weights,
    })
}

/// Least-squares fit with its coefficient covariance.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub variance_mode: VarianceMode,
    /// Residual degrees of freedom `n - q`.
    pub df: usize,
}

/// A design matrix with its Gram inverse cached for repeated fits.
#[derive(Debug, Clone)]
pub struct Design {
    w: DMatrix<f64>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    gram_inv: DMatrix<f64>,
}

impl Design {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        let (n, q) = w.shape();
        if n <= q {
            return Err(Error::TooFewSamples { n, q });
        }
        let gram = w.tr_mul(&w);
        let chol = gram.clone().cholesky().ok_or(Error::Singular("normal equations"))?;
        let gram_inv = spd_inverse(&gram, "normal equations")?;
        Ok(Self { w, chol, gram_inv })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn fit(&self, y: &DVector<f64>, mode: VarianceMode) -> Result<OlsFit> {
        let (n, q) = self.w.shape();
        if y.len() != n {
            return Err(Error::Shape(format!("response has {} rows, design has {n}", y.len())));
        }
        let beta = self.chol.solve(&self.w.tr_mul(y));
        let residuals = y - &self.w * &beta;
        let cov = match mode {
            VarianceMode::Sandwich => {
                let mut meat = DMatrix::<f64>::zeros(q, q);
                for i in 0..n {
                    let r2 = residuals[i] * residuals[i];
                    for a in 0..q {
                        let wa = self.w[(i, a)] * r2;
                        for b in a..q {
                            meat[(a, b)] += wa * self.w[(i, b)];
                        }
                    }
                }
                meat.fill_lower_triangle_with_upper_triangle();
                let c = &self.gram_inv * meat * &self.gram_inv;
                (&c + c.transpose()) * 0.5
            }
            VarianceMode::Homoskedastic => {
                let sigma2 = residuals.norm_squared() / (n - q) as f64;
                &self.gram_inv * sigma2
            }
        };
        Ok(OlsFit {
            beta,
            cov,
            residuals,
            variance_mode: mode,
            df: n - q,
        })
    }
}

/// `beta = (W'W)^-1 W'y` with the requested covariance.
pub fn ols_sandwich(y_tilde: &DVector<f64>, w: &DMatrix<f64>, mode: VarianceMode) -> Result<OlsFit> {
    Design::new(w.clone())?.fit(y_tilde, mode)
}

/// Wald test of coefficient `t`: `(beta, se, z, p, degenerate)`.
///
/// A standard error within rounding of zero relative to the response scale
/// is treated as an exact fit.
pub fn wald_test(fit: &OlsFit, t: usize, response_scale: f64) -> (f64, f64, f64, f64, bool) {
    let beta = fit.beta[t];
    let se = fit.cov[(t, t)].max(0.0).sqrt();
    let tiny = 1e-12 * (1.0 + response_scale);
    if se <= tiny {
        let p = if beta.abs() <= tiny { 1.0 } else { 0.0 };
        let z = if p == 1.0 { 0.0 } else { beta.signum() * f64::INFINITY };
        return (beta, se, z, p, true);
    }
    let z = beta / se;
    let p = match fit.variance_mode {
        VarianceMode::Sandwich => normal_two_sided(z),
        VarianceMode::Homoskedastic => student_two_sided(z, fit.df as f64),
    };
    (beta, se, z, p, false)
}

/// Fitted nuisance quantities over all columns of a dataset.
///
/// Anything left `None` is estimated on demand by [`Nuisances::complete`];
/// supplied matrices (an oracle outcome matrix, true propensities, an
/// external imputation) are used as given.
#[derive(Debug, Clone, Default)]
pub struct Nuisances {
    /// Augmented conditional means, used by Plugin, PluginMissing and DR_UW.
    pub nu: Option<DMatrix<f64>>,
    /// Covariate-only conditional means, used by DR_W.
    pub mu: Option<DMatrix<f64>>,
    /// Per-column propensities.
    pub delta: Option<DMatrix<f64>>,
    /// Complete outcomes, required by Full.
    pub oracle: Option<DMatrix<f64>>,
    /// Whether the augmented imputer converged.
    pub imputer_converged: bool,
}

fn subset_columns(m: &Option<DMatrix<f64>>, columns: &[usize]) -> Option<DMatrix<f64>> {
    m.as_ref().map(|m| DMatrix::from_fn(m.nrows(), columns.len(), |i, k| m[(i, columns[k])]))
}

fn check_shape(name: &str, m: &Option<DMatrix<f64>>, d: &Dataset) -> Result<()> {
    match m {
        Some(m) if m.shape() != (d.n_samples(), d.n_peptides()) => Err(Error::Shape(format!(
            "{name} is {}×{}, outcomes are {}×{}",
            m.nrows(),
            m.ncols(),
            d.n_samples(),
            d.n_peptides()
        ))),
        _ => Ok(()),
    }
}

impl Nuisances {
    pub fn with_oracle(mut self, y: DMatrix<f64>) -> Self {
        self.oracle = Some(y);
        self
    }

    pub fn with_nu(mut self, nu: DMatrix<f64>) -> Self {
        self.nu = Some(nu);
        self.imputer_converged = true;
        self
    }

    pub fn with_mu(mut self, mu: DMatrix<f64>) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_delta(mut self, delta: DMatrix<f64>) -> Self {
        self.delta = Some(delta);
        self
    }

    /// Restrict every supplied matrix to `columns`.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        Self {
            nu: subset_columns(&self.nu, columns),
            mu: subset_columns(&self.mu, columns),
            delta: subset_columns(&self.delta, columns),
            oracle: subset_columns(&self.oracle, columns),
            imputer_converged: self.imputer_converged,
        }
    }

    /// Estimate whatever `methods` need and was not supplied.
    pub fn complete(mut self, d: &Dataset, methods: &[MethodKind], cfg: &AnalysisConfig) -> Result<Self> {
        for (name, m) in [("nu", &self.nu), ("mu", &self.mu), ("delta", &self.delta), ("oracle", &self.oracle)] {
            check_shape(name, m, d)?;
        }
        let needs_nu = methods.iter().any(|m| m.uses_augmented_imputer());
        let needs_mu = methods.contains(&MethodKind::DrW);
        let needs_delta = methods.iter().any(|m| m.is_doubly_robust());
        if methods.contains(&MethodKind::Full) && self.oracle.is_none() {
            return Err(Error::InvalidArgument("the full-data method needs the complete outcome matrix".into()));
        }
        if needs_nu && self.nu.is_none() {
            let fit = impute(d, &cfg.imputer)?;
            self.imputer_converged = fit.converged;
            self.nu = Some(fit.nu_hat);
        }
        if needs_mu && self.mu.is_none() {
            self.mu = Some(impute(d, &ImputerConfig::new(ImputerBackend::LowDim))?.nu_hat);
        }
        if needs_delta && self.delta.is_none() {
            self.delta = Some(fit_propensities(d, &cfg.propensity)?);
        }
        Ok(self)
    }
}

/// Logistic propensity of every column's mask on the covariates.
pub fn fit_propensities(d: &Dataset, cfg: &PropensityConfig) -> Result<DMatrix<f64>> {
    let columns: Vec<DVector<f64>> = (0..d.n_peptides())
        .into_par_iter()
        .map(|j| {
            let fit = fit_logistic(&d.mask_column(j), d.w(), cfg)?;
            if fit.separated {
                warn!("column '{}': propensity fit is (quasi-)separated", d.peptide_ids()[j]);
            }
            Ok(fit.delta_hat)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&columns))
}

/// Settings of a full analysis run.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    /// Name of the tested covariate.
    pub target: String,
    pub alpha: f64,
    /// `None` uses [`VarianceMode::default_for`].
    pub variance: Option<VarianceMode>,
    pub propensity: PropensityConfig,
    pub imputer: ImputerConfig,
    /// Minimum observation rate for a column to be tested.
    pub rate_threshold: f64,
    /// Minimum rate for a column to be fed to the imputer.
    pub feed_threshold: f64,
}

impl AnalysisConfig {
    pub fn new(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            alpha: 0.05,
            variance: None,
            propensity: PropensityConfig::default(),
            imputer: ImputerConfig::default(),
            rate_threshold: 0.0,
            feed_threshold: DEFAULT_FEED_THRESHOLD,
        }
    }
}

/// Why a column produced no inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    AllMissing,
    TooFewObserved { observed: usize, required: usize },
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::AllMissing => f.write_str("no observed values"),
            SkipReason::TooFewObserved { observed, required } => {
                write!(f, "{observed} observed rows, need at least {required}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum ColumnResult {
    Fitted(PeptideInference),
    Skipped(SkipReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedColumn {
    pub peptide_id: String,
    pub reason: SkipReason,
}

/// Results of one method over a set of columns.
#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub method: MethodKind,
    pub results: Vec<PeptideInference>,
    pub skipped: Vec<SkippedColumn>,
    pub selection: SelectionResult,
}

fn nuisance_column<'a>(m: &'a Option<DMatrix<f64>>, name: &str, j: usize) -> Result<nalgebra::DVectorView<'a, f64>> {
    m.as_ref()
        .map(|m| m.column(j))
        .ok_or_else(|| Error::InvalidArgument(format!("missing nuisance '{name}'")))
}

fn column_response(d: &Dataset, j: usize, method: MethodKind, nuis: &Nuisances) -> Result<DVector<f64>> {
    let n = d.n_samples();
    match method {
        MethodKind::Full => Ok(nuisance_column(&nuis.oracle, "oracle", j)?.into_owned()),
        MethodKind::Complete => unreachable!("complete-case fits use their own design"),
        MethodKind::Plugin => Ok(nuisance_column(&nuis.nu, "nu", j)?.into_owned()),
        MethodKind::PluginMissing => {
            let nu = nuisance_column(&nuis.nu, "nu", j)?;
            Ok(DVector::from_fn(n, |i, _| d.observed(i, j).unwrap_or(nu[i])))
        }
        MethodKind::DrW | MethodKind::DrUw => {
            let nu = if method == MethodKind::DrW {
                nuisance_column(&nuis.mu, "mu", j)?
            } else {
                nuisance_column(&nuis.nu, "nu", j)?
            };
            let delta = nuisance_column(&nuis.delta, "delta", j)?;
            let y: Vec<f64> = (0..n).map(|i| d.observed(i, j).unwrap_or(f64::NAN)).collect();
            let pseudo = pseudo_outcomes(&y, &d.mask_column(j), delta.as_slice(), nu.as_slice())?;
            Ok(pseudo.y_tilde)
        }
    }
}

fn check_floor(delta: &DMatrix<f64>, j: usize, floor: f64) -> Result<()> {
    match delta.column(j).iter().find(|&&v| v < floor) {
        Some(&value) => Err(Error::PropensityBelowFloor { value, floor }),
        None => Ok(()),
    }
}

fn infer_column(
    d: &Dataset,
    design: &Design,
    j: usize,
    method: MethodKind,
    nuis: &Nuisances,
    target: usize,
    mode: VarianceMode,
    clip_floor: f64,
) -> Result<ColumnResult> {
    let q = d.n_covariates();
    let observed = d.observed_count(j);
    if method != MethodKind::Full && observed == 0 {
        return Ok(ColumnResult::Skipped(SkipReason::AllMissing));
    }
    let (fit, scale) = if method == MethodKind::Complete {
        let required = q + 2;
        if observed < required {
            return Ok(ColumnResult::Skipped(SkipReason::TooFewObserved { observed, required }));
        }
        let rows = d.observed_rows(j);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| d.y_obs()[(i, j)]));
        let sub = Design::new(select_rows(d.w(), &rows))?;
        (sub.fit(&y, mode)?, y.amax())
    } else {
        if method.is_doubly_robust() {
            check_floor(nuis.delta.as_ref().expect("propensities fitted"), j, clip_floor)?;
        }
        let y = column_response(d, j, method, nuis)?;
        (design.fit(&y, mode)?, y.amax())
    };
    let (beta, se, z, p_value, degenerate) = wald_test(&fit, target, scale);
    Ok(ColumnResult::Fitted(PeptideInference {
        peptide_id: d.peptide_ids()[j].clone(),
        method,
        beta,
        se,
        z,
        p_value,
        q_value: f64::NAN,
        degenerate,
    }))
}

/// Inference for a single column given fitted nuisances. The q-value is
/// left as NaN; it is only defined across a family of columns.
pub fn infer_peptide(
    d: &Dataset,
    j: usize,
    method: MethodKind,
    nuis: &Nuisances,
    cfg: &AnalysisConfig,
) -> Result<ColumnResult> {
    let target = d.covariate_index(&cfg.target)?;
    let design = Design::new(d.w().clone())?;
    let mode = cfg.variance.unwrap_or(VarianceMode::default_for(method));
    infer_column(d, &design, j, method, nuis, target, mode, cfg.propensity.clip_floor)
}

/// Run `method` over `columns` of `d` with completed nuisances, then adjust
/// and select.
pub fn infer_columns(
    d: &Dataset,
    columns: &[usize],
    method: MethodKind,
    nuis: &Nuisances,
    cfg: &AnalysisConfig,
) -> Result<InferenceReport> {
    let target = d.covariate_index(&cfg.target)?;
    let design = Design::new(d.w().clone())?;
    let mode = cfg.variance.unwrap_or(VarianceMode::default_for(method));
    let floor = cfg.propensity.clip_floor;
    let outcomes: Vec<ColumnResult> = columns
        .par_iter()
        .map(|&j| infer_column(d, &design, j, method, nuis, target, mode, floor))
        .collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(columns.len());
    let mut skipped = Vec::new();
    for (&j, outcome) in columns.iter().zip(outcomes) {
        match outcome {
            ColumnResult::Fitted(r) => results.push(r),
            ColumnResult::Skipped(reason) => {
                debug!("skipping '{}': {reason}", d.peptide_ids()[j]);
                skipped.push(SkippedColumn {
                    peptide_id: d.peptide_ids()[j].clone(),
                    reason,
                });
            }
        }
    }
    if !skipped.is_empty() {
        warn!("{} of {} columns skipped", skipped.len(), columns.len());
    }
    let selection = adjust_and_select(&mut results, cfg.alpha)?;
    Ok(InferenceReport {
        method,
        results,
        skipped,
        selection,
    })
}

/// Filter by observation rate, estimate nuisances on the imputation set and
/// test every retained column.
pub fn infer_all(d: &Dataset, method: MethodKind, cfg: &AnalysisConfig) -> Result<InferenceReport> {
    infer_all_with(d, method, cfg, Nuisances::default())
}

/// As [`infer_all`], with some nuisances supplied in `d`'s column order.
pub fn infer_all_with(d: &Dataset, method: MethodKind, cfg: &AnalysisConfig, supplied: Nuisances) -> Result<InferenceReport> {
    let (data, columns, supplied) = prepare(d, cfg, supplied)?;
    let nuis = supplied.complete(&data, &[method], cfg)?;
    infer_columns(&data, &columns, method, &nuis, cfg)
}

/// Rate filtering shared by the in-sample and cross-fitted paths: returns
/// the imputation dataset, the positions of the tested columns in it, and
/// the supplied nuisances restricted to it.
fn prepare(d: &Dataset, cfg: &AnalysisConfig, supplied: Nuisances) -> Result<(Dataset, Vec<usize>, Nuisances)> {
    for (name, m) in [
        ("nu", &supplied.nu),
        ("mu", &supplied.mu),
        ("delta", &supplied.delta),
        ("oracle", &supplied.oracle),
    ] {
        check_shape(name, m, d)?;
    }
    let filtered = filter_by_rate(d, cfg.rate_threshold, cfg.feed_threshold)?;
    let positions: Vec<usize> = filtered
        .inference_columns
        .iter()
        .map(|j| filtered.imputation_columns.binary_search(j).expect("inference set within imputation set"))
        .collect();
    let supplied = supplied.select_columns(&filtered.imputation_columns);
    Ok((filtered.imputation, positions, supplied))
}

/// Row indices of fold `k` out of `folds` (rows `i` with `i % folds == k`).
pub fn fold_rows(n: usize, folds: usize, k: usize) -> Vec<usize> {
    (k..n).step_by(folds).collect()
}

/// Cross-fitted nuisances: every row's propensity and conditional mean come
/// from fits that never saw that row.
pub fn cross_fit_nuisances(d: &Dataset, folds: usize, method: MethodKind, cfg: &AnalysisConfig) -> Result<Nuisances> {
    let (n, p, q) = (d.n_samples(), d.n_peptides(), d.n_covariates());
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("cross-fitting needs at least 2 folds, got {folds}")));
    }
    if n / folds <= q {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds of {n} samples leave {} rows per fold, need more than {q}",
            n / folds
        )));
    }
    let imputer = match method {
        MethodKind::DrW => ImputerConfig::new(ImputerBackend::LowDim),
        MethodKind::DrUw => cfg.imputer.clone(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "cross-fitting applies to doubly robust methods, not '{other}'"
            )))
        }
    };
    let mut nu = DMatrix::zeros(n, p);
    let mut delta = DMatrix::zeros(n, p);
    for k in 0..folds {
        let hold = fold_rows(n, folds, k);
        let train: Vec<usize> = (0..n).filter(|i| i % folds != k).collect();
        let pred = impute_out_of_fold(d, &imputer, &train, &hold)?;
        let w_train = select_rows(d.w(), &train);
        let w_hold = select_rows(d.w(), &hold);
        let fold_delta: Vec<DVector<f64>> = (0..p)
            .into_par_iter()
            .map(|j| {
                let c: Vec<bool> = train.iter().map(|&i| d.is_observed(i, j)).collect();
                fit_logistic(&c, &w_train, &cfg.propensity)?.predict(&w_hold)
            })
            .collect::<Result<_>>()?;
        for (r, &i) in hold.iter().enumerate() {
            for j in 0..p {
                nu[(i, j)] = pred[(r, j)];
                delta[(i, j)] = fold_delta[j][r];
            }
        }
    }
    let base = Nuisances::default().with_delta(delta);
    Ok(if method == MethodKind::DrW {
        base.with_mu(nu)
    } else {
        base.with_nu(nu)
    })
}

/// Doubly robust inference with nuisances cross-fitted over `folds` folds,
/// followed by a single least-squares fit on the assembled pseudo-outcomes.
pub fn infer_cross_fit(d: &Dataset, folds: usize, method: MethodKind, cfg: &AnalysisConfig) -> Result<InferenceReport> {
    let (data, columns, _) = prepare(d, cfg, Nuisances::default())?;
    let nuis = cross_fit_nuisances(&data, folds, method, cfg)?;
    infer_columns(&data, &columns, method, &nuis, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::INTERCEPT_NAME;
    use proptest::prelude::*;

    fn design_with_slope(x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), 2, |i, k| if k == 0 { 1.0 } else { x[i] })
    }

    fn dataset(y: DMatrix<f64>, mask: DMatrix<bool>, x: &[f64]) -> Dataset {
        Dataset::with_mask(y, mask, design_with_slope(x), vec![INTERCEPT_NAME.into(), "a".into()]).unwrap()
    }

    #[test]
    fn pseudo_outcome_examples() {
        let p = pseudo_outcomes(&[2.0], &[true], &[1.0], &[7.0]).unwrap();
        assert_eq!(p.y_tilde[0], 2.0);
        let p = pseudo_outcomes(&[f64::NAN], &[false], &[0.3], &[1.5]).unwrap();
        assert_eq!(p.y_tilde[0], 1.5);
        assert_eq!(p.weights_used[0], 0.0);
        let p = pseudo_outcomes(&[2.0], &[true], &[0.5], &[1.0]).unwrap();
        assert_eq!(p.y_tilde[0], 3.0);
        assert_eq!(p.weights_used[0], 2.0);
        assert!(pseudo_outcomes(&[2.0], &[true], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_response_has_zero_covariance() {
        let w = DMatrix::from_element(5, 1, 1.0);
        let fit = ols_sandwich(&DVector::from_element(5, 4.0), &w, VarianceMode::Sandwich).unwrap();
        assert_eq!(fit.beta[0], 4.0);
        assert_eq!(fit.cov[(0, 0)], 0.0);
        let (_, _, _, p, degenerate) = wald_test(&fit, 0, 4.0);
        assert!(degenerate && p == 0.0);
    }

    #[test]
    fn exact_line_has_zero_covariance() {
        let w = design_with_slope(&[0.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0]);
        for mode in [VarianceMode::Sandwich, VarianceMode::Homoskedastic] {
            let fit = ols_sandwich(&y, &w, mode).unwrap();
            assert!((fit.beta[0]).abs() < 1e-14 && (fit.beta[1] - 1.0).abs() < 1e-14);
            assert!(fit.cov.amax() < 1e-28);
        }
    }

    #[test]
    fn sandwich_matches_longhand_oracle() {
        // W = [1 x], x = (0, 1, 2, 4), y = (1, 0, 3, 5)
        let x = [0.0, 1.0, 2.0, 4.0];
        let y = [1.0, 0.0, 3.0, 5.0];
        let (s0, s1, s2) = (4.0, x.iter().sum::<f64>(), x.iter().map(|v| v * v).sum::<f64>());
        let det = s0 * s2 - s1 * s1;
        let inv = [[s2 / det, -s1 / det], [-s1 / det, s0 / det]];
        let t0: f64 = y.iter().sum();
        let t1: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let b0 = inv[0][0] * t0 + inv[0][1] * t1;
        let b1 = inv[1][0] * t0 + inv[1][1] * t1;
        let mut meat = [[0.0; 2]; 2];
        let mut rss = 0.0;
        for i in 0..4 {
            let r = y[i] - b0 - b1 * x[i];
            let wi = [1.0, x[i]];
            rss += r * r;
            for a in 0..2 {
                for b in 0..2 {
                    meat[a][b] += r * r * wi[a] * wi[b];
                }
            }
        }
        let mut oracle = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        oracle[a][b] += inv[a][k] * meat[k][l] * inv[l][b];
                    }
                }
            }
        }
        let fit = ols_sandwich(&DVector::from_row_slice(&y), &design_with_slope(&x), VarianceMode::Sandwich).unwrap();
        assert!((fit.beta[0] - b0).abs() < 1e-12 && (fit.beta[1] - b1).abs() < 1e-12);
        for a in 0..2 {
            for b in 0..2 {
                assert!((fit.cov[(a, b)] - oracle[a][b]).abs() < 1e-12);
            }
        }
        let homo = ols_sandwich(&DVector::from_row_slice(&y), &design_with_slope(&x), VarianceMode::Homoskedastic).unwrap();
        assert!((homo.cov[(1, 1)] - rss / 2.0 * inv[1][1]).abs() < 1e-12);
        assert_eq!(homo.df, 2);
    }

    #[test]
    fn p_values_use_matching_reference() {
        let x = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let y = DVector::from_vec(vec![0.3, 0.8, 2.5, 2.9, 4.6, 4.7]);
        let w = design_with_slope(&x);
        let s = ols_sandwich(&y, &w, VarianceMode::Sandwich).unwrap();
        let (_, _, z, p, _) = wald_test(&s, 1, 4.7);
        assert!((p - normal_two_sided(z)).abs() < 1e-15);
        let h = ols_sandwich(&y, &w, VarianceMode::Homoskedastic).unwrap();
        let (_, _, z, p, _) = wald_test(&h, 1, 4.7);
        assert!((p - student_two_sided(z, 4.0)).abs() < 1e-15);
    }

    #[test]
    fn fully_observed_column_collapses_all_estimators() {
        let x = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let y = DMatrix::from_column_slice(7, 1, &[0.2, 1.4, -0.3, 0.9, 1.1, 0.5, 2.0]);
        let d = dataset(y.clone(), DMatrix::from_element(7, 1, true), &x);
        let cfg = AnalysisConfig::new("a");
        let mut betas = Vec::new();
        for method in MethodKind::ALL {
            if method == MethodKind::Plugin {
                continue;
            }
            let r = infer_all_with(&d, method, &cfg, Nuisances::default().with_oracle(y.clone())).unwrap();
            betas.push(r.results[0].beta);
        }
        assert!(betas.iter().all(|b| (b - betas[0]).abs() < 1e-12), "{betas:?}");
    }

    #[test]
    fn complete_case_skips_sparse_column() {
        let x = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let y = DMatrix::from_fn(6, 2, |i, j| (i + j) as f64);
        let mask = DMatrix::from_fn(6, 2, |i, j| j == 0 || i < 3);
        let d = dataset(y, mask, &x);
        let r = infer_all(&d, MethodKind::Complete, &AnalysisConfig::new("a")).unwrap();
        assert_eq!(r.results.len(), 1);
        assert_eq!(
            r.skipped[0].reason,
            SkipReason::TooFewObserved {
                observed: 3,
                required: 4
            }
        );
    }

    fn toy(n: usize, p: usize) -> (DMatrix<f64>, DMatrix<bool>, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let y = DMatrix::from_fn(n, p, |i, j| ((i * 7 + j * 13) % 11) as f64 * 0.3 + x[i] * j as f64);
        let mask = DMatrix::from_fn(n, p, |i, j| (i * 3 + j) % 5 != 0);
        (y, mask, x)
    }

    #[test]
    fn duplicate_and_shuffled_columns() {
        let (y, mask, x) = toy(20, 3);
        let dup = DMatrix::from_fn(20, 2, |i, _| y[(i, 1)]);
        let dup_mask = DMatrix::from_fn(20, 2, |i, _| mask[(i, 1)]);
        let cfg = AnalysisConfig {
            imputer: ImputerConfig::new(ImputerBackend::Mean),
            ..AnalysisConfig::new("a")
        };
        let r = infer_all(&dataset(dup, dup_mask, &x), MethodKind::DrUw, &cfg).unwrap();
        assert_eq!(r.results[0].beta, r.results[1].beta);
        assert_eq!(r.results[0].p_value, r.results[1].p_value);

        let d = dataset(y, mask, &x);
        let base = infer_all(&d, MethodKind::DrW, &cfg).unwrap();
        let shuffled = d.select_columns(&[2, 0, 1]);
        let other = infer_all(&shuffled, MethodKind::DrW, &cfg).unwrap();
        for r in &base.results {
            let s = other.results.iter().find(|s| s.peptide_id == r.peptide_id).unwrap();
            assert_eq!((r.beta, r.se, r.p_value, r.q_value), (s.beta, s.se, s.p_value, s.q_value));
        }
    }

    #[test]
    fn all_missing_column_is_skipped() {
        let (y, mut mask, x) = toy(20, 3);
        mask.column_mut(1).fill(false);
        let d = dataset(y, mask, &x);
        let cfg = AnalysisConfig {
            imputer: ImputerConfig::new(ImputerBackend::LowDim),
            ..AnalysisConfig::new("a")
        };
        let r = infer_all(&d, MethodKind::DrUw, &cfg).unwrap();
        assert_eq!(r.results.len(), 2);
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].reason, SkipReason::AllMissing);
    }

    #[test]
    fn cross_fit_collapses_on_fully_observed_data() {
        let (y, _, x) = toy(20, 3);
        let d = dataset(y, DMatrix::from_element(20, 3, true), &x);
        let cfg = AnalysisConfig::new("a");
        let plain = infer_all(&d, MethodKind::DrUw, &cfg).unwrap();
        let cross = infer_cross_fit(&d, 2, MethodKind::DrUw, &cfg).unwrap();
        for (a, b) in plain.results.iter().zip(&cross.results) {
            assert!((a.beta - b.beta).abs() < 1e-12 && (a.se - b.se).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_fit_rejects_small_folds() {
        let (y, mask, x) = toy(20, 3);
        let d = dataset(y, mask, &x);
        let cfg = AnalysisConfig::new("a");
        assert!(matches!(infer_cross_fit(&d, 20, MethodKind::DrUw, &cfg), Err(Error::InvalidArgument(_))));
        assert!(matches!(infer_cross_fit(&d, 1, MethodKind::DrUw, &cfg), Err(Error::InvalidArgument(_))));
        assert!(infer_cross_fit(&d, 5, MethodKind::DrW, &cfg).is_ok());
    }

    #[test]
    fn supplied_propensity_below_floor_is_rejected() {
        let (y, mask, x) = toy(20, 2);
        let d = dataset(y, mask, &x);
        let cfg = AnalysisConfig::new("a");
        let delta = DMatrix::from_element(20, 2, 0.001);
        let err = infer_all_with(&d, MethodKind::DrW, &cfg, Nuisances::default().with_delta(delta)).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn full_needs_oracle() {
        let (y, mask, x) = toy(20, 2);
        let d = dataset(y, mask, &x);
        assert!(infer_all(&d, MethodKind::Full, &AnalysisConfig::new("a")).is_err());
    }

    proptest! {
        #[test]
        fn covariance_is_psd_and_normal_equations_hold(
            rows in prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -10.0..10.0f64), 6..30)
        ) {
            let n = rows.len();
            let w = DMatrix::from_fn(n, 3, |i, k| match k { 0 => 1.0, 1 => rows[i].0, _ => rows[i].1 });
            prop_assume!(crate::linalg::numeric_rank(&w) == 3);
            let design = match Design::new(w.clone()) {
                Ok(d) => d,
                Err(_) => return Ok(()),
            };
            prop_assume!(crate::linalg::thin_svd(&w).map(|(_, s, _)| s[0] / s[2] < 1e6).unwrap_or(false));
            let y = DVector::from_fn(n, |i, _| rows[i].2);
            for mode in [VarianceMode::Sandwich, VarianceMode::Homoskedastic] {
                let fit = design.fit(&y, mode).unwrap();
                prop_assert!((&fit.cov - fit.cov.transpose()).amax() == 0.0);
                let eig = fit.cov.clone().symmetric_eigenvalues();
                prop_assert!(eig.iter().all(|&e| e >= -1e-10), "{eig:?}");
                let ne = w.tr_mul(&fit.residuals);
                let scale = 1.0 + y.amax() * w.amax() * n as f64;
                prop_assert!(ne.amax() <= 1e-8 * scale);
            }
        }
    }
}
