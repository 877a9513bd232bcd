use log::warn;
use nalgebra::DMatrix;

use crate::data::Dataset;

/// Observed mean of column `j` over `rows`, or `None` if nothing is observed.
pub(crate) fn column_mean(d: &Dataset, j: usize, rows: &[usize]) -> Option<f64> {
    let (sum, count) = rows
        .iter()
        .filter_map(|&i| d.observed(i, j))
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Column means fitted on `train_rows`, broadcast to `predict_rows`.
pub(crate) fn predict(d: &Dataset, train_rows: &[usize], predict_rows: &[usize]) -> DMatrix<f64> {
    let p = d.n_peptides();
    let means: Vec<f64> = (0..p)
        .map(|j| {
            column_mean(d, j, train_rows).unwrap_or_else(|| {
                warn!("column '{}' has no observed values; imputing zeros", d.peptide_ids()[j]);
                0.0
            })
        })
        .collect();
    DMatrix::from_fn(predict_rows.len(), p, |_, j| means[j])
}
