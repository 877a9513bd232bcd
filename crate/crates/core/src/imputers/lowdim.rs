use log::warn;
use nalgebra::{DMatrix, DVector};

use super::mean::column_mean;
use crate::data::Dataset;
use crate::linalg::spd_solve;

/// Per-column outcome model on the covariates only.
#[derive(Debug, Clone)]
pub(crate) enum ColumnModel {
    Linear(DVector<f64>),
    Constant(f64),
}

impl ColumnModel {
    #[inline]
    pub(crate) fn predict_row(&self, w: &DMatrix<f64>, i: usize) -> f64 {
        match self {
            ColumnModel::Linear(b) => w.row(i).iter().zip(b.iter()).map(|(a, b)| a * b).sum(),
            ColumnModel::Constant(m) => *m,
        }
    }
}

/// Least squares of the observed entries of column `j` (restricted to `rows`) on W.
/// Falls back to the observed mean when there are too few rows for the fit.
pub(crate) fn fit_column(d: &Dataset, j: usize, rows: &[usize]) -> ColumnModel {
    let w = d.w();
    let q = w.ncols();
    let observed: Vec<usize> = rows.iter().copied().filter(|&i| d.is_observed(i, j)).collect();
    if observed.len() > q {
        let mut xtx = DMatrix::zeros(q, q);
        let mut xty = DVector::zeros(q);
        for &i in &observed {
            let y = d.y_obs()[(i, j)];
            for a in 0..q {
                xty[a] += w[(i, a)] * y;
                for b in a..q {
                    xtx[(a, b)] += w[(i, a)] * w[(i, b)];
                }
            }
        }
        xtx.fill_lower_triangle_with_upper_triangle();
        if let Ok(coef) = spd_solve(&xtx, &xty, "column regression") {
            return ColumnModel::Linear(coef);
        }
    }
    let mean = column_mean(d, j, rows);
    warn!(
        "column '{}': {} observed rows for {q} covariates, using the observed mean",
        d.peptide_ids()[j],
        observed.len()
    );
    ColumnModel::Constant(mean.unwrap_or(0.0))
}

pub(crate) fn fit_columns(d: &Dataset, rows: &[usize]) -> Vec<ColumnModel> {
    (0..d.n_peptides()).map(|j| fit_column(d, j, rows)).collect()
}

pub(crate) fn fitted_values(d: &Dataset, models: &[ColumnModel], rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), models.len(), |k, j| models[j].predict_row(d.w(), rows[k]))
}

pub(crate) fn predict(d: &Dataset, train_rows: &[usize], predict_rows: &[usize]) -> DMatrix<f64> {
    let models = fit_columns(d, train_rows);
    fitted_values(d, &models, predict_rows)
}
