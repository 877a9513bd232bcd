//! Estimators of the conditional-mean nuisance.
//!
//! Every backend reads the outcome matrix only through
//! [`Dataset::observed`], so masked cells never influence a fit.

mod knn;
mod lowdim;
mod mean;
mod soft;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::data::{read_numeric_table, Dataset};
use crate::error::{Error, Result};
use crate::rng::substream;

pub use knn::MIN_OVERLAP;
pub use soft::{soft_impute_matrix, zero_filled_top_singular_value, SoftImputeFit};

/// Available imputation backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImputerBackend {
    /// Observed column mean.
    Mean,
    /// Column-wise least squares on the covariates.
    LowDim,
    /// Covariate fit plus a nuclear-norm penalised low-rank residual.
    SoftImpute,
    /// k most correlated peptides.
    KnnPeptide,
    /// Peptide neighbours followed by a pass over sample neighbours.
    KnnTwoStep,
}

impl ImputerBackend {
    pub const ALL: [ImputerBackend; 5] = [
        ImputerBackend::Mean,
        ImputerBackend::LowDim,
        ImputerBackend::SoftImpute,
        ImputerBackend::KnnPeptide,
        ImputerBackend::KnnTwoStep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ImputerBackend::Mean => "mean",
            ImputerBackend::LowDim => "lowdim",
            ImputerBackend::SoftImpute => "soft",
            ImputerBackend::KnnPeptide => "knn",
            ImputerBackend::KnnTwoStep => "knn2",
        }
    }
}

impl fmt::Display for ImputerBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImputerBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(ImputerBackend::Mean),
            "lowdim" | "lowdim_ols" => Ok(ImputerBackend::LowDim),
            "soft" | "soft_impute" => Ok(ImputerBackend::SoftImpute),
            "knn" | "knn_peptide" => Ok(ImputerBackend::KnnPeptide),
            "knn2" | "knn_two_step" => Ok(ImputerBackend::KnnTwoStep),
            other => Err(Error::InvalidArgument(format!("unknown imputer '{other}'"))),
        }
    }
}

/// Settings shared by all backends; each reads only the fields it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputerConfig {
    pub backend: ImputerBackend,
    /// Soft-impute penalty. `None` picks `lambda_fraction` times the top
    /// singular value of the zero-filled residual matrix.
    pub rank_penalty: Option<f64>,
    pub lambda_fraction: f64,
    pub max_rank: usize,
    pub k_neighbors: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            backend: ImputerBackend::SoftImpute,
            rank_penalty: None,
            lambda_fraction: 0.1,
            max_rank: 10,
            k_neighbors: 10,
            max_iter: 500,
            tol: 1e-5,
        }
    }
}

impl ImputerConfig {
    pub fn new(backend: ImputerBackend) -> Self {
        Self {
            backend,
            ..Self::default()
        }
    }

    fn validate(&self, d: &Dataset) -> Result<()> {
        if let Some(l) = self.rank_penalty {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::InvalidArgument(format!("rank penalty must be >= 0, got {l}")));
            }
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {}", self.tol)));
        }
        match self.backend {
            ImputerBackend::SoftImpute if self.max_rank == 0 => {
                Err(Error::InvalidArgument("max_rank must be >= 1".into()))
            }
            ImputerBackend::KnnPeptide | ImputerBackend::KnnTwoStep => {
                if self.k_neighbors == 0 {
                    return Err(Error::InvalidArgument("k_neighbors must be >= 1".into()));
                }
                if self.k_neighbors >= d.n_peptides() {
                    return Err(Error::InvalidArgument(format!(
                        "k_neighbors = {} must be below the number of peptides ({})",
                        self.k_neighbors,
                        d.n_peptides()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn soft_settings(&self, n: usize, p: usize) -> soft::SoftSettings {
        let cap = n.min(p);
        if self.max_rank > cap {
            debug!("max_rank {} capped at min(n, p) = {cap}", self.max_rank);
        }
        soft::SoftSettings {
            lambda: self.rank_penalty,
            lambda_fraction: self.lambda_fraction,
            max_rank: self.max_rank.min(cap),
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

/// Fitted conditional means for every cell of the outcome matrix.
#[derive(Debug, Clone)]
pub struct ImputedMatrix {
    pub nu_hat: DMatrix<f64>,
    /// `None` when the matrix was supplied from a file.
    pub backend: Option<ImputerBackend>,
    /// Per-column held-out mean squared error, when computed.
    pub diagnostics: Option<Vec<f64>>,
    pub converged: bool,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Singular("imputation produced non-finite values"))
    }
}

/// Fit on `train_rows` and predict the rows in `predict_rows`.
///
/// The returned matrix has one row per entry of `predict_rows`. With
/// `train_rows == predict_rows ==` all rows this is the ordinary in-sample fit.
pub fn impute_out_of_fold(
    d: &Dataset,
    cfg: &ImputerConfig,
    train_rows: &[usize],
    predict_rows: &[usize],
) -> Result<DMatrix<f64>> {
    cfg.validate(d)?;
    let out = match cfg.backend {
        ImputerBackend::Mean => mean::predict(d, train_rows, predict_rows),
        ImputerBackend::LowDim => lowdim::predict(d, train_rows, predict_rows),
        ImputerBackend::SoftImpute => {
            soft::predict(d, &cfg.soft_settings(train_rows.len(), d.n_peptides()), train_rows, predict_rows)?
        }
        ImputerBackend::KnnPeptide => knn::predict_peptide(d, cfg.k_neighbors, train_rows, predict_rows),
        ImputerBackend::KnnTwoStep => knn::predict_two_step(d, cfg.k_neighbors, train_rows, predict_rows),
    };
    check_finite(&out)?;
    Ok(out)
}

/// In-sample imputation with the configured backend.
pub fn impute(d: &Dataset, cfg: &ImputerConfig) -> Result<ImputedMatrix> {
    cfg.validate(d)?;
    let all: Vec<usize> = (0..d.n_samples()).collect();
    let (nu_hat, converged) = match cfg.backend {
        ImputerBackend::SoftImpute => {
            let (m, ok) = soft::impute(d, &cfg.soft_settings(d.n_samples(), d.n_peptides()))?;
            if !ok {
                warn!("soft-impute stopped after {} iterations without converging", cfg.max_iter);
            }
            (m, ok)
        }
        _ => (impute_out_of_fold(d, cfg, &all, &all)?, true),
    };
    check_finite(&nu_hat)?;
    Ok(ImputedMatrix {
        nu_hat,
        backend: Some(cfg.backend),
        diagnostics: None,
        converged,
    })
}

pub fn impute_mean(d: &Dataset) -> Result<ImputedMatrix> {
    impute(d, &ImputerConfig::new(ImputerBackend::Mean))
}

pub fn impute_lowdim(d: &Dataset) -> Result<ImputedMatrix> {
    impute(d, &ImputerConfig::new(ImputerBackend::LowDim))
}

/// Soft-impute with the settings in `cfg`, whatever its `backend` field says.
pub fn impute_soft(d: &Dataset, cfg: &ImputerConfig) -> Result<ImputedMatrix> {
    impute(
        d,
        &ImputerConfig {
            backend: ImputerBackend::SoftImpute,
            ..cfg.clone()
        },
    )
}

/// Peptide-neighbour imputation; `two_step` adds the sample pass.
pub fn impute_knn(d: &Dataset, cfg: &ImputerConfig, two_step: bool) -> Result<ImputedMatrix> {
    let backend = if two_step {
        ImputerBackend::KnnTwoStep
    } else {
        ImputerBackend::KnnPeptide
    };
    impute(d, &ImputerConfig { backend, ..cfg.clone() })
}

/// Per-column mean squared error on a random `fraction` of the observed
/// entries, hidden from the fit and then predicted.
pub fn held_out_mse(d: &Dataset, cfg: &ImputerConfig, fraction: f64, seed: u64) -> Result<Vec<f64>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("hold-out fraction must be in (0, 1), got {fraction}")));
    }
    let (n, p) = (d.n_samples(), d.n_peptides());
    let mut cells: Vec<(usize, usize)> = (0..p)
        .flat_map(|j| (0..n).filter(move |&i| d.is_observed(i, j)).map(move |i| (i, j)))
        .collect();
    let mut rng = substream(seed, 0, 0);
    cells.shuffle(&mut rng);
    let hidden = &cells[..((cells.len() as f64) * fraction).round() as usize];
    let mut mask = d.mask().clone();
    for &(i, j) in hidden {
        mask[(i, j)] = false;
    }
    let reduced = Dataset::new(
        d.y_obs().clone(),
        mask,
        d.w().clone(),
        d.covariate_names().to_vec(),
        d.has_intercept(),
        d.peptide_ids().to_vec(),
        d.sample_ids().to_vec(),
    )?;
    let fit = impute(&reduced, cfg)?;
    let mut sum = vec![0.0; p];
    let mut count = vec![0usize; p];
    for &(i, j) in hidden {
        sum[j] += (fit.nu_hat[(i, j)] - d.y_obs()[(i, j)]).powi(2);
        count[j] += 1;
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect())
}

/// Load a precomputed n×p matrix of conditional means.
///
/// Columns are matched to the dataset's peptides by name and may come in any
/// order; sample ids, when the file has them, must match the dataset's.
pub fn load_external_nu(path: &Path, d: &Dataset) -> Result<ImputedMatrix> {
    let table = read_numeric_table(path)?;
    let (n, p) = (d.n_samples(), d.n_peptides());
    if table.values.nrows() != n || table.values.ncols() != p {
        return Err(Error::Shape(format!(
            "external matrix is {}×{}, outcomes are {n}×{p}",
            table.values.nrows(),
            table.values.ncols()
        )));
    }
    if let Some(ids) = &table.sample_ids {
        if ids.as_slice() != d.sample_ids() {
            return Err(Error::Shape("external matrix sample ids differ from the outcomes".into()));
        }
    }
    let order: Vec<usize> = d
        .peptide_ids()
        .iter()
        .map(|id| {
            table
                .header
                .iter()
                .position(|h| h == id)
                .ok_or_else(|| Error::Shape(format!("external matrix has no column '{id}'")))
        })
        .collect::<Result<_>>()?;
    let nu_hat = DMatrix::from_fn(n, p, |i, j| table.values[(i, order[j])]);
    Ok(ImputedMatrix {
        nu_hat,
        backend: None,
        diagnostics: None,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::INTERCEPT_NAME;
    use proptest::prelude::*;

    fn intercept_only(y: DMatrix<f64>, mask: DMatrix<bool>) -> Dataset {
        let n = y.nrows();
        Dataset::with_mask(y, mask, DMatrix::from_element(n, 1, 1.0), vec![INTERCEPT_NAME.into()]).unwrap()
    }

    fn with_slope(y: DMatrix<f64>, mask: DMatrix<bool>, x: &[f64]) -> Dataset {
        let n = y.nrows();
        let w = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { x[i] });
        Dataset::with_mask(y, mask, w, vec![INTERCEPT_NAME.into(), "x".into()]).unwrap()
    }

    #[test]
    fn mean_of_observed_entries() {
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 3.0, 0.0]);
        let mask = DMatrix::from_column_slice(4, 1, &[true, false, true, false]);
        let fit = impute_mean(&intercept_only(y, mask)).unwrap();
        assert!(fit.nu_hat.iter().all(|&v| v == 2.0));

        let y = DMatrix::from_column_slice(4, 1, &[5.0, 0.0, 0.0, 0.0]);
        let mask = DMatrix::from_column_slice(4, 1, &[true, false, false, false]);
        let fit = impute_mean(&intercept_only(y, mask)).unwrap();
        assert!(fit.nu_hat.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn mean_of_fully_observed_column_is_constant() {
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 6.0]);
        let fit = impute_mean(&intercept_only(y, DMatrix::from_element(4, 1, true))).unwrap();
        assert!(fit.nu_hat.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn all_missing_column_imputes_zero() {
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 4.0, 0.0]);
        let mask = DMatrix::from_fn(4, 2, |_, j| j == 0);
        let fit = impute_mean(&intercept_only(y, mask)).unwrap();
        assert!(fit.nu_hat.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lowdim_three_point_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 99.0]);
        let mask = DMatrix::from_column_slice(4, 1, &[true, true, true, false]);
        let fit = impute_lowdim(&with_slope(y, mask, &x)).unwrap();
        for i in 0..4 {
            assert!((fit.nu_hat[(i, 0)] - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn lowdim_reproduces_linear_truth_under_any_mask() {
        let x = [0.3, -1.0, 2.5, 0.0, 1.7, -0.4];
        let y = DMatrix::from_fn(6, 2, |i, j| 1.5 - 2.0 * x[i] + j as f64 * x[i]);
        let mask = DMatrix::from_fn(6, 2, |i, j| (i + 2 * j) % 4 != 0);
        let fit = impute_lowdim(&with_slope(y.clone(), mask, &x)).unwrap();
        assert!((fit.nu_hat - y).amax() < 1e-10);
    }

    #[test]
    fn lowdim_intercept_only_equals_mean() {
        let y = DMatrix::from_row_slice(5, 2, &[1.0, 2.0, 4.0, 1.0, 0.0, 3.0, 7.0, 8.0, 2.0, 2.0]);
        let mask = DMatrix::from_fn(5, 2, |i, j| (i + j) % 3 != 0);
        let d = intercept_only(y, mask);
        let a = impute_lowdim(&d).unwrap().nu_hat;
        let b = impute_mean(&d).unwrap().nu_hat;
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn lowdim_columns_lie_in_covariate_span() {
        let x = [0.1, 0.9, -0.5, 2.0, 1.1, 0.4, -1.3];
        let y = DMatrix::from_fn(7, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 - x[i]);
        let mask = DMatrix::from_fn(7, 3, |i, j| (i * j) % 4 != 1);
        let d = with_slope(y, mask, &x);
        let nu = impute_lowdim(&d).unwrap().nu_hat;
        let w = d.w();
        let hat = w * (w.transpose() * w).try_inverse().unwrap() * w.transpose();
        assert!((&hat * &nu - &nu).amax() < 1e-10);
    }

    #[test]
    fn soft_with_full_shrinkage_equals_lowdim() {
        let x = [0.1, 0.9, -0.5, 2.0, 1.1, 0.4, -1.3, 0.8];
        let y = DMatrix::from_fn(8, 4, |i, j| ((i * 5 + j * 3) % 7) as f64 + x[i] * j as f64);
        let mask = DMatrix::from_fn(8, 4, |i, j| (i + j) % 5 != 0);
        let d = with_slope(y, mask, &x);
        let cfg = ImputerConfig {
            rank_penalty: Some(1e6),
            ..ImputerConfig::default()
        };
        let soft = impute_soft(&d, &cfg).unwrap().nu_hat;
        let low = impute_lowdim(&d).unwrap().nu_hat;
        assert!((soft - low).amax() < 1e-10);
    }

    #[test]
    fn knn_rejects_k_at_least_p() {
        let d = intercept_only(DMatrix::from_element(4, 2, 1.0), DMatrix::from_element(4, 2, true));
        let cfg = ImputerConfig {
            k_neighbors: 2,
            ..ImputerConfig::default()
        };
        assert!(matches!(impute_knn(&d, &cfg, false), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backend_names_round_trip() {
        for b in ImputerBackend::ALL {
            assert_eq!(b.as_str().parse::<ImputerBackend>().unwrap(), b);
        }
        assert_eq!("soft_impute".parse::<ImputerBackend>().unwrap(), ImputerBackend::SoftImpute);
        assert!("vae".parse::<ImputerBackend>().is_err());
    }

    #[test]
    fn external_matrix_is_matched_by_column_name() {
        let d = intercept_only(DMatrix::from_element(4, 2, 1.0), DMatrix::from_element(4, 2, true));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nu.csv");
        std::fs::write(&path, "sample_id,pep1,pep0\ns0,1,10\ns1,2,20\ns2,3,30\ns3,4,40\n").unwrap();
        let fit = load_external_nu(&path, &d).unwrap();
        assert_eq!(fit.nu_hat[(2, 0)], 30.0);
        assert_eq!(fit.nu_hat[(2, 1)], 3.0);
        assert!(fit.backend.is_none());

        std::fs::write(&path, "pep0,pep1\n1,2\n").unwrap();
        assert!(matches!(load_external_nu(&path, &d), Err(Error::Shape(_))));
    }

    #[test]
    fn held_out_error_is_small_for_linear_truth() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
        let y = DMatrix::from_fn(30, 3, |i, j| 1.0 + x[i] * (j as f64 + 1.0));
        let d = with_slope(y, DMatrix::from_element(30, 3, true), &x);
        let mse = held_out_mse(&d, &ImputerConfig::new(ImputerBackend::LowDim), 0.2, 3).unwrap();
        assert!(mse.iter().all(|&m| m < 1e-20));
    }

    fn masked_pair() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<bool>, DMatrix<f64>)> {
        let (n, p) = (9usize, 4usize);
        (
            prop::collection::vec(-3.0..3.0f64, n * p),
            prop::collection::vec(prop::bool::weighted(0.75), n * p),
            prop::collection::vec(-50.0..50.0f64, n * p),
        )
            .prop_map(move |(y, m, junk)| {
                (
                    DMatrix::from_vec(n, p, y),
                    DMatrix::from_vec(n, p, m),
                    DMatrix::from_vec(n, p, junk),
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn backends_never_read_masked_cells((y, mask, junk) in masked_pair()) {
            let x: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).sin()).collect();
            let d = with_slope(y, mask, &x);
            let poisoned = d.with_masked_values(|i, j| junk[(i, j)]);
            for backend in ImputerBackend::ALL {
                let cfg = ImputerConfig { k_neighbors: 2, max_rank: 3, ..ImputerConfig::new(backend) };
                let a = impute(&d, &cfg).unwrap().nu_hat;
                let b = impute(&poisoned, &cfg).unwrap().nu_hat;
                prop_assert_eq!(a, b, "backend {}", backend);
            }
        }
    }
}
