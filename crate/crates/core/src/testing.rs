//! Benjamini–Hochberg q-values, cutoff selection and the mirror-rate diagnostic.

use crate::data::PeptideInference;
use crate::error::{Error, Result};

/// Outcome of thresholding a family of q-values.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub q_values: Vec<f64>,
    /// Indices into `q_values` with `q <= alpha`, ascending.
    pub selected: Vec<usize>,
    pub alpha: f64,
    /// `None` when no selected coefficient is positive.
    pub mirror_rate: Option<f64>,
}

/// Step-up adjusted p-values `q_(i) = min_{j >= i} p_(j) m / j`, capped at 1,
/// returned in input order.
pub fn bh_qvalues(p_values: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let mut q = vec![0.0; m];
    let mut running = 1.0_f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        running = running.min(p_values[i] * m as f64 / (rank + 1) as f64);
        q[i] = running;
    }
    Ok(q)
}

/// Indices with `q <= alpha`; the boundary is included.
pub fn select(q_values: &[f64], alpha: f64) -> Vec<usize> {
    q_values
        .iter()
        .enumerate()
        .filter(|(_, &q)| q <= alpha)
        .map(|(i, _)| i)
        .collect()
}

/// Negative over positive selected coefficients. Exact zeros count in neither.
pub fn mirror_rate(inferences: &[PeptideInference], selected: &[usize]) -> Option<f64> {
    let (mut neg, mut pos) = (0usize, 0usize);
    for &i in selected {
        let b = inferences[i].beta;
        if b > 0.0 {
            pos += 1;
        } else if b < 0.0 {
            neg += 1;
        }
    }
    (pos > 0).then(|| neg as f64 / pos as f64)
}

/// Fill `q_value` on every inference and select at `alpha`.
pub fn adjust_and_select(inferences: &mut [PeptideInference], alpha: f64) -> Result<SelectionResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let p: Vec<f64> = inferences.iter().map(|r| r.p_value).collect();
    let q_values = bh_qvalues(&p)?;
    for (r, &q) in inferences.iter_mut().zip(&q_values) {
        r.q_value = q;
    }
    let selected = select(&q_values, alpha);
    let mirror_rate = mirror_rate(inferences, &selected);
    Ok(SelectionResult {
        q_values,
        selected,
        alpha,
        mirror_rate,
    })
}
