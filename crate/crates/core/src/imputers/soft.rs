//! Soft-impute: iterative singular-value soft-thresholding.
//!
//! The outcome matrix is first residualised column-wise on the covariates;
//! the low-rank stage then completes the residual matrix and the fitted
//! covariate effects are added back.

use log::warn;
use nalgebra::{DMatrix, DVector};

use super::lowdim::{fit_columns, fitted_values};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{spd_solve, TruncatedSvd};

/// Extra subspace dimensions carried by the warm-started SVD.
const OVERSAMPLE: usize = 5;

/// Result of completing a single matrix.
#[derive(Debug, Clone)]
pub struct SoftImputeFit {
    /// Low-rank estimate at every cell.
    pub completed: DMatrix<f64>,
    /// Thresholded singular values (length ≤ max_rank, zeros dropped).
    pub singular_values: Vec<f64>,
    /// Right singular vectors matching `singular_values`.
    pub right: DMatrix<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest singular value of the zero-filled observed matrix.
pub fn zero_filled_top_singular_value(r: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<f64> {
    let x = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| if mask[(i, j)] { r[(i, j)] } else { 0.0 });
    Ok(TruncatedSvd::exact(&x, 1)?.s.first().copied().unwrap_or(0.0))
}

/// Complete `r` (read only where `mask` is set) with penalty `lambda`.
///
/// Iterates `Z <- S_lambda(P_obs(r) + P_miss(Z))`, truncated to `max_rank`
/// singular values, until the relative Frobenius change is at most `tol`.
pub fn soft_impute_matrix(
    r: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    lambda: f64,
    max_rank: usize,
    tol: f64,
    max_iter: usize,
) -> Result<SoftImputeFit> {
    let (n, p) = r.shape();
    if mask.shape() != (n, p) {
        return Err(Error::Shape("mask and residual matrix differ".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("rank penalty must be non-negative, got {lambda}")));
    }
    let full = n.min(p);
    let rank = max_rank.clamp(1, full.max(1));
    let width = (rank + OVERSAMPLE).min(full);
    let exact = width >= full;

    let mut x = DMatrix::from_fn(n, p, |i, j| if mask[(i, j)] { r[(i, j)] } else { 0.0 });
    let mut z = DMatrix::<f64>::zeros(n, p);
    let mut basis: Option<DMatrix<f64>> = None;
    let mut kept = (Vec::new(), DMatrix::zeros(p, 0));
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=max_iter {
        iterations = iter;
        let svd = match (&basis, exact) {
            (Some(start), false) => TruncatedSvd::subspace(&x, width, start, 1)?,
            _ => TruncatedSvd::exact(&x, if exact { full } else { width })?,
        };
        let keep = svd.s.iter().take(rank).filter(|&&s| s > lambda).count();
        let mut z_new = DMatrix::zeros(n, p);
        for k in 0..keep {
            let shrunk = svd.s[k] - lambda;
            z_new += (svd.u.column(k) * shrunk) * svd.v.column(k).transpose();
        }
        let change = (&z_new - &z).norm();
        let scale = z.norm().max(z_new.norm());
        kept = (
            svd.s[..keep].iter().map(|s| s - lambda).collect(),
            svd.v.columns(0, keep).into_owned(),
        );
        if !exact {
            basis = Some(svd.v.clone());
        }
        z = z_new;
        for j in 0..p {
            for i in 0..n {
                if !mask[(i, j)] {
                    x[(i, j)] = z[(i, j)];
                }
            }
        }
        if scale == 0.0 || change <= tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("soft-impute stopped after {iterations} iterations without reaching tol {tol}");
    }
    Ok(SoftImputeFit {
        completed: z,
        singular_values: kept.0,
        right: kept.1,
        lambda,
        iterations,
        converged,
    })
}

/// Residual matrix on `rows`: observed entries minus the covariate fit.
fn residuals(d: &Dataset, fitted: &DMatrix<f64>, rows: &[usize]) -> (DMatrix<f64>, DMatrix<bool>) {
    let p = d.n_peptides();
    let mask = DMatrix::from_fn(rows.len(), p, |k, j| d.is_observed(rows[k], j));
    let r = DMatrix::from_fn(rows.len(), p, |k, j| match d.observed(rows[k], j) {
        Some(y) => y - fitted[(k, j)],
        None => 0.0,
    });
    (r, mask)
}

pub(crate) struct SoftSettings {
    pub lambda: Option<f64>,
    pub lambda_fraction: f64,
    pub max_rank: usize,
    pub tol: f64,
    pub max_iter: usize,
}

fn resolve_lambda(s: &SoftSettings, r: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<f64> {
    match s.lambda {
        Some(l) => Ok(l),
        None => Ok(s.lambda_fraction * zero_filled_top_singular_value(r, mask)?),
    }
}

/// In-sample completion of `d`: covariate fit plus completed residuals.
pub(crate) fn impute(d: &Dataset, s: &SoftSettings) -> Result<(DMatrix<f64>, bool)> {
    let rows: Vec<usize> = (0..d.n_samples()).collect();
    let models = fit_columns(d, &rows);
    let fitted = fitted_values(d, &models, &rows);
    let (r, mask) = residuals(d, &fitted, &rows);
    let lambda = resolve_lambda(s, &r, &mask)?;
    let fit = soft_impute_matrix(&r, &mask, lambda, s.max_rank, s.tol, s.max_iter)?;
    Ok((fitted + fit.completed, fit.converged))
}

/// Fit on `train_rows`, predict `predict_rows`. Each predicted cell uses the
/// row's other observed entries projected on the fitted column loadings,
/// never the cell itself.
pub(crate) fn predict(d: &Dataset, s: &SoftSettings, train_rows: &[usize], predict_rows: &[usize]) -> Result<DMatrix<f64>> {
    let p = d.n_peptides();
    let models = fit_columns(d, train_rows);
    let fitted_train = fitted_values(d, &models, train_rows);
    let (r, mask) = residuals(d, &fitted_train, train_rows);
    let lambda = resolve_lambda(s, &r, &mask)?;
    let fit = soft_impute_matrix(&r, &mask, lambda, s.max_rank, s.tol, s.max_iter)?;

    // Loadings B = V sqrt(S); a new row's factor solves a ridge problem with
    // the same penalty.
    let rank = fit.singular_values.len();
    let mut loadings = fit.right.clone();
    for k in 0..rank {
        loadings.column_mut(k).scale_mut(fit.singular_values[k].sqrt());
    }
    let fitted = fitted_values(d, &models, predict_rows);
    let mut out = fitted.clone();
    if rank == 0 {
        return Ok(out);
    }
    let ridge = lambda.max(1e-10);
    for (k, &i) in predict_rows.iter().enumerate() {
        let mut gram = DMatrix::<f64>::zeros(rank, rank);
        let mut rhs = DVector::<f64>::zeros(rank);
        let mut resid = vec![None; p];
        for l in 0..p {
            if let Some(y) = d.observed(i, l) {
                let rl = y - fitted[(k, l)];
                let b = loadings.row(l);
                gram += b.transpose() * b;
                rhs += b.transpose() * rl;
                resid[l] = Some(rl);
            }
        }
        for j in 0..p {
            let b = loadings.row(j);
            let (mut g, mut h) = (gram.clone(), rhs.clone());
            if let Some(rj) = resid[j] {
                g -= b.transpose() * b;
                h -= b.transpose() * rj;
            }
            for a in 0..rank {
                g[(a, a)] += ridge;
            }
            let factor = spd_solve(&g, &h, "soft-impute row factor")?;
            out[(k, j)] += b.dot(&factor.transpose());
        }
    }
    Ok(out)
}
