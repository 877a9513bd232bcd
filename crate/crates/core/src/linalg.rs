//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Numerical rank from singular values, relative tolerance `max(n, q) * eps * s_max`.
pub fn numeric_rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let s = match thin_svd(a) {
        Ok((_, s, _)) => s,
        Err(_) => return 0,
    };
    let s_max = s.iter().cloned().fold(0.0_f64, f64::max);
    if s_max == 0.0 {
        return 0;
    }
    let tol = a.nrows().max(a.ncols()) as f64 * f64::EPSILON * s_max;
    s.iter().filter(|&&v| v > tol).count()
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::Singular(context))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Solve `a x = b` for symmetric positive definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::Singular(context))?;
    Ok(chol.solve(b))
}

/// Rows `rows` of `a`, in the given order.
pub fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

/// Thin SVD `a = u diag(s) vᵀ` with singular values in decreasing order.
///
/// Delegates to faer: nalgebra's bidiagonal SVD loses accuracy in the
/// leading triplets of rank-deficient inputs.
pub fn thin_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let (n, p) = a.shape();
    let m = faer::Mat::<f64>::from_fn(n, p, |i, j| a[(i, j)]);
    let svd = m.thin_svd().map_err(|_| Error::Singular("svd"))?;
    let k = n.min(p);
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let u = DMatrix::from_fn(n, k, |i, c| fu[(i, c)]);
    let v = DMatrix::from_fn(p, k, |j, c| fv[(j, c)]);
    let mut s: Vec<f64> = (0..k).map(|c| fs[c]).collect();
    let order: Vec<usize> = {
        let mut o: Vec<usize> = (0..k).collect();
        o.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
        o
    };
    if order.iter().enumerate().all(|(a, &b)| a == b) {
        return Ok((u, s, v));
    }
    let u = DMatrix::from_fn(n, k, |i, c| u[(i, order[c])]);
    let v = DMatrix::from_fn(p, k, |j, c| v[(j, order[c])]);
    s = order.iter().map(|&c| s[c]).collect();
    Ok((u, s, v))
}

/// Thin SVD truncated to the leading `rank` triplets.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    /// Full decomposition, sorted by decreasing singular value, then truncated.
    pub fn exact(a: &DMatrix<f64>, rank: usize) -> Result<Self> {
        let (u, s, v) = thin_svd(a)?;
        let k = rank.min(s.len());
        Ok(Self {
            u: u.columns(0, k).into_owned(),
            s: s[..k].to_vec(),
            v: v.columns(0, k).into_owned(),
        })
    }

    /// Leading triplets by block subspace iteration started from `start`
    /// (columns span the initial right subspace). `power` extra passes
    /// through `a aᵀ` sharpen the subspace.
    pub fn subspace(a: &DMatrix<f64>, rank: usize, start: &DMatrix<f64>, power: usize) -> Result<Self> {
        let mut q = orthonormal_columns(&(a * start));
        for _ in 0..power {
            let z = orthonormal_columns(&(a.transpose() * &q));
            q = orthonormal_columns(&(a * z));
        }
        let b = q.transpose() * a;
        let small = Self::exact(&b, rank)?;
        Ok(Self {
            u: &q * small.u,
            s: small.s,
            v: small.v,
        })
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.s.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().q()
}
