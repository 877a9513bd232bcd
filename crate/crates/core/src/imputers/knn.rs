//! Nearest-neighbour imputation over peptides, optionally followed by a pass
//! over samples.

use nalgebra::DMatrix;

use super::mean::column_mean;
use crate::data::Dataset;

/// Minimum number of co-observed rows for a similarity to be defined.
pub const MIN_OVERLAP: usize = 3;

/// Pairwise statistics over co-observed rows.
pub(crate) struct PeptideNeighbours {
    /// `mean[(j, l)]`: mean of column j over rows where j and l are observed.
    mean: DMatrix<f64>,
    sd: DMatrix<f64>,
    /// Candidate neighbours of each column, most correlated first.
    ranked: Vec<Vec<usize>>,
    fallback: Vec<f64>,
}

/// Pearson correlation between columns `j` and `l` over co-observed `rows`,
/// with the per-pair means and standard deviations. `None` when the overlap
/// is below [`MIN_OVERLAP`] or either column is constant there.
pub(crate) fn pair_stats(d: &Dataset, j: usize, l: usize, rows: &[usize]) -> Option<(f64, [f64; 4])> {
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|&i| Some((d.observed(i, j)?, d.observed(i, l)?)))
        .collect();
    if pairs.len() < MIN_OVERLAP {
        return None;
    }
    let m = pairs.len() as f64;
    let mj = pairs.iter().map(|p| p.0).sum::<f64>() / m;
    let ml = pairs.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut sjj, mut sll, mut sjl) = (0.0, 0.0, 0.0);
    for &(a, b) in &pairs {
        sjj += (a - mj) * (a - mj);
        sll += (b - ml) * (b - ml);
        sjl += (a - mj) * (b - ml);
    }
    if sjj <= 0.0 || sll <= 0.0 {
        return None;
    }
    let corr = sjl / (sjj * sll).sqrt();
    Some((corr, [mj, (sjj / m).sqrt(), ml, (sll / m).sqrt()]))
}

impl PeptideNeighbours {
    pub(crate) fn fit(d: &Dataset, rows: &[usize]) -> Self {
        let p = d.n_peptides();
        let mut corr = DMatrix::from_element(p, p, f64::NAN);
        let mut mean = DMatrix::from_element(p, p, f64::NAN);
        let mut sd = DMatrix::from_element(p, p, f64::NAN);
        for j in 0..p {
            for l in (j + 1)..p {
                if let Some((r, [mj, sj, ml, sl])) = pair_stats(d, j, l, rows) {
                    corr[(j, l)] = r;
                    corr[(l, j)] = r;
                    mean[(j, l)] = mj;
                    sd[(j, l)] = sj;
                    mean[(l, j)] = ml;
                    sd[(l, j)] = sl;
                }
            }
        }
        let ranked = (0..p)
            .map(|j| {
                let mut cands: Vec<usize> = (0..p).filter(|&l| l != j && corr[(j, l)].is_finite()).collect();
                cands.sort_by(|&a, &b| corr[(j, b)].total_cmp(&corr[(j, a)]).then(a.cmp(&b)));
                cands
            })
            .collect();
        let fallback = (0..p).map(|j| column_mean(d, j, rows).unwrap_or(0.0)).collect();
        Self {
            mean,
            sd,
            ranked,
            fallback,
        }
    }

    /// Prediction for cell (i, j) from the `k` best neighbours observed at row i.
    pub(crate) fn predict_cell(&self, d: &Dataset, i: usize, j: usize, k: usize) -> f64 {
        let mut total = 0.0;
        let mut used = 0;
        for &l in &self.ranked[j] {
            if used == k {
                break;
            }
            if let Some(y) = d.observed(i, l) {
                let (mj, sj) = (self.mean[(j, l)], self.sd[(j, l)]);
                let (ml, sl) = (self.mean[(l, j)], self.sd[(l, j)]);
                total += mj + (sj / sl) * (y - ml);
                used += 1;
            }
        }
        if used == 0 {
            self.fallback[j]
        } else {
            total / used as f64
        }
    }
}

/// Peptide-neighbour predictions for every cell of `predict_rows`.
pub(crate) fn predict_peptide(d: &Dataset, k: usize, train_rows: &[usize], predict_rows: &[usize]) -> DMatrix<f64> {
    let model = PeptideNeighbours::fit(d, train_rows);
    DMatrix::from_fn(predict_rows.len(), d.n_peptides(), |r, j| model.predict_cell(d, predict_rows[r], j, k))
}

/// Two-step variant: complete the matrix from peptide neighbours, then
/// replace every cell by the mean of the `k` closest samples from the
/// training pool (the row itself excluded).
pub(crate) fn predict_two_step(d: &Dataset, k: usize, train_rows: &[usize], predict_rows: &[usize]) -> DMatrix<f64> {
    let p = d.n_peptides();
    let model = PeptideNeighbours::fit(d, train_rows);
    let completed_row = |i: usize| -> Vec<f64> {
        (0..p)
            .map(|j| d.observed(i, j).unwrap_or_else(|| model.predict_cell(d, i, j, k)))
            .collect()
    };
    let pool: Vec<Vec<f64>> = train_rows.iter().map(|&i| completed_row(i)).collect();

    // column scales from observed training entries
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let vals: Vec<f64> = train_rows.iter().filter_map(|&i| d.observed(i, j)).collect();
            if vals.len() < 2 {
                return 1.0;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();

    let mut out = DMatrix::zeros(predict_rows.len(), p);
    for (r, &i) in predict_rows.iter().enumerate() {
        let query = completed_row(i);
        let mut dists: Vec<(f64, usize)> = train_rows
            .iter()
            .enumerate()
            .filter(|&(_, &t)| t != i)
            .map(|(t, _)| {
                let dist = (0..p).map(|j| ((query[j] - pool[t][j]) / scale[j]).powi(2)).sum::<f64>();
                (dist, t)
            })
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let chosen = &dists[..k.min(dists.len())];
        if chosen.is_empty() {
            for j in 0..p {
                out[(r, j)] = query[j];
            }
            continue;
        }
        for j in 0..p {
            out[(r, j)] = chosen.iter().map(|&(_, t)| pool[t][j]).sum::<f64>() / chosen.len() as f64;
        }
    }
    out
}
