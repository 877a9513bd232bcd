//! Logistic observation-probability model fitted by IRLS.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::spd_solve;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropensityConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Lower bound applied to fitted probabilities.
    pub clip_floor: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            clip_floor: 0.01,
        }
    }
}

/// Fitted logistic model with clipped per-sample probabilities.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub coef: DVector<f64>,
    /// Fitted probabilities clipped to `[clip_floor, 1]`.
    pub delta_hat: DVector<f64>,
    pub clip_floor: f64,
    pub converged: bool,
    pub iterations: usize,
    /// All indicators were equal; the fit is the constant in `constant`.
    pub separated: bool,
    pub constant: Option<f64>,
}

const DIVERGENCE_NORM: f64 = 1e6;
const MAX_HALVINGS: usize = 40;
/// Consecutive halved steps tolerated while the full step leaves the bound.
const DIVERGENCE_PATIENCE: usize = 3;

#[inline]
fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^eta)` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of `coef`.
pub fn log_likelihood(c: &[bool], w: &DMatrix<f64>, coef: &DVector<f64>) -> f64 {
    let eta = w * coef;
    c.iter()
        .zip(eta.iter())
        .map(|(&ci, &e)| if ci { e - softplus(e) } else { -softplus(e) })
        .sum()
}

/// Gradient of the log-likelihood, `Σ (c_i - p_i) w_i`, at unclipped probabilities.
pub fn score(c: &[bool], w: &DMatrix<f64>, coef: &DVector<f64>) -> DVector<f64> {
    let eta = w * coef;
    let resid = DVector::from_iterator(
        c.len(),
        c.iter().zip(eta.iter()).map(|(&ci, &e)| f64::from(u8::from(ci)) - sigmoid(e)),
    );
    w.transpose() * resid
}

/// Fit `P(C = 1 | W)` by Newton-Raphson (IRLS) with step halving.
pub fn fit_logistic(c: &[bool], w: &DMatrix<f64>, cfg: &PropensityConfig) -> Result<PropensityFit> {
    let (n, q) = w.shape();
    if c.len() != n {
        return Err(Error::Shape(format!("{} indicators for {n} rows", c.len())));
    }
    if !(0.0..1.0).contains(&cfg.clip_floor) || cfg.clip_floor == 0.0 {
        return Err(Error::InvalidArgument(format!("clip floor must lie in (0, 1), got {}", cfg.clip_floor)));
    }
    let observed = c.iter().filter(|&&x| x).count();
    if observed == n || observed == 0 {
        let value = if observed == n { 1.0 } else { cfg.clip_floor };
        return Ok(PropensityFit {
            coef: DVector::zeros(q),
            delta_hat: DVector::from_element(n, value),
            clip_floor: cfg.clip_floor,
            converged: true,
            iterations: 0,
            separated: true,
            constant: Some(value),
        });
    }

    let mut coef = DVector::zeros(q);
    let mut ll = log_likelihood(c, w, &coef);
    let mut converged = false;
    let mut iterations = 0;
    let mut diverging = 0;
    for iter in 1..=cfg.max_iter {
        iterations = iter;
        let eta = w * &coef;
        let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let grad = {
            let r = DVector::from_iterator(n, c.iter().zip(&probs).map(|(&ci, &p)| f64::from(u8::from(ci)) - p));
            w.transpose() * r
        };
        if grad.amax() <= cfg.tol {
            converged = true;
            break;
        }
        let hess = hessian(w, &probs);
        let step = spd_solve(&hess, &grad, "logistic Hessian")?;

        let full_norm = (&coef + &step).norm();
        if full_norm > DIVERGENCE_NORM {
            diverging += 1;
            if diverging > DIVERGENCE_PATIENCE {
                return Err(Error::Divergence { iterations: iter, norm: full_norm });
            }
        } else {
            diverging = 0;
        }
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &coef + &step * scale;
            let cand_ll = log_likelihood(c, w, &candidate);
            if cand_ll.is_finite() && cand_ll >= ll && candidate.norm() <= DIVERGENCE_NORM {
                accepted = Some((candidate, cand_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            // No ascent direction left at machine precision.
            converged = true;
            break;
        };
        let rel_change = (next_ll - ll).abs() / ll.abs().max(1e-300);
        coef = next;
        ll = next_ll;
        if rel_change <= cfg.tol {
            // One more Newton step is cheap and brings the score to ~0.
            continue_polish(c, w, &mut coef, &mut ll);
            converged = true;
            break;
        }
    }

    let eta = w * &coef;
    // Fitted probabilities pinned at 0 or 1: the data are (quasi-)separated
    // and the coefficients are a finite stand-in for a divergent MLE.
    let separated = eta.iter().any(|&e| e.abs() > 30.0);
    let delta_hat = clip(&eta, cfg.clip_floor);
    Ok(PropensityFit {
        coef,
        delta_hat,
        clip_floor: cfg.clip_floor,
        converged,
        iterations,
        separated,
        constant: None,
    })
}

fn continue_polish(c: &[bool], w: &DMatrix<f64>, coef: &mut DVector<f64>, ll: &mut f64) {
    let n = w.nrows();
    let eta = w * &*coef;
    let probs: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let r = DVector::from_iterator(n, c.iter().zip(&probs).map(|(&ci, &p)| f64::from(u8::from(ci)) - p));
    let grad = w.transpose() * r;
    let hess = hessian(w, &probs);
    if let Ok(step) = spd_solve(&hess, &grad, "logistic Hessian") {
        let candidate = &*coef + step;
        let cand_ll = log_likelihood(c, w, &candidate);
        if cand_ll.is_finite() && cand_ll >= *ll {
            *coef = candidate;
            *ll = cand_ll;
        }
    }
}

/// `Wᵀ diag(p (1 - p)) W`.
fn hessian(w: &DMatrix<f64>, probs: &[f64]) -> DMatrix<f64> {
    let q = w.ncols();
    let mut hess = DMatrix::zeros(q, q);
    for (i, &p) in probs.iter().enumerate() {
        let v = p * (1.0 - p);
        for a in 0..q {
            let wa = w[(i, a)] * v;
            for b in a..q {
                hess[(a, b)] += wa * w[(i, b)];
            }
        }
    }
    hess.fill_lower_triangle_with_upper_triangle();
    hess
}

fn clip(eta: &DVector<f64>, floor: f64) -> DVector<f64> {
    eta.map(|e| sigmoid(e).clamp(floor, 1.0))
}

impl PropensityFit {
    /// Clipped probabilities for new covariate rows.
    pub fn predict(&self, w_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        if w_new.ncols() != self.coef.len() {
            return Err(Error::Shape(format!(
                "propensity model has {} coefficients, got {} columns",
                self.coef.len(),
                w_new.ncols()
            )));
        }
        Ok(match self.constant {
            Some(v) => DVector::from_element(w_new.nrows(), v),
            None => clip(&(w_new * &self.coef), self.clip_floor),
        })
    }

    /// Fit with known probabilities, bypassing estimation. Values are
    /// clipped to `[clip_floor, 1]`.
    pub fn known(delta: DVector<f64>, clip_floor: f64) -> Self {
        let delta_hat = delta.map(|d| d.clamp(clip_floor, 1.0));
        Self {
            coef: DVector::zeros(0),
            delta_hat,
            clip_floor,
            converged: true,
            iterations: 0,
            separated: false,
            constant: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn all_observed_is_constant_one() {
        let w = DMatrix::from_fn(5, 2, |i, k| if k == 0 { 1.0 } else { i as f64 });
        let fit = fit_logistic(&[true; 5], &w, &PropensityConfig::default()).unwrap();
        assert!(fit.separated && fit.converged);
        assert!(fit.delta_hat.iter().all(|&d| d == 1.0));
        assert_eq!(fit.predict(&w).unwrap(), fit.delta_hat);
    }

    #[test]
    fn none_observed_is_clip_floor() {
        let fit = fit_logistic(&[false; 4], &intercept(4), &PropensityConfig::default()).unwrap();
        assert!(fit.separated);
        assert!(fit.delta_hat.iter().all(|&d| d == 0.01));
    }

    #[test]
    fn intercept_only_equals_sample_proportion() {
        let c = [true, true, false, true];
        let fit = fit_logistic(&c, &intercept(4), &PropensityConfig::default()).unwrap();
        assert!(fit.converged);
        // closed form: logit(3/4) = ln 3
        assert!((fit.coef[0] - 3f64.ln()).abs() < 1e-10);
        for d in fit.delta_hat.iter() {
            assert!((d - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_examples() {
        let mut fit = fit_logistic(&[true, false, true], &intercept(3), &PropensityConfig::default()).unwrap();
        fit.coef = DVector::zeros(1);
        assert!(fit.predict(&intercept(2)).unwrap().iter().all(|&p| p == 0.5));
        fit.coef = DVector::from_element(1, 50.0);
        assert!(fit.predict(&intercept(2)).unwrap().iter().all(|&p| p > 1.0 - 1e-15));
        assert!(fit.predict(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn training_rows_reproduce_delta_hat() {
        let w = DMatrix::from_fn(8, 2, |i, k| if k == 0 { 1.0 } else { i as f64 / 7.0 });
        let c = [true, false, true, true, false, true, true, true];
        let fit = fit_logistic(&c, &w, &PropensityConfig::default()).unwrap();
        assert_eq!(fit.predict(&w).unwrap(), fit.delta_hat);
    }

    #[test]
    fn score_vanishes_and_likelihood_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 300;
        let w = DMatrix::from_fn(n, 3, |_, k| if k == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
        let c: Vec<bool> = (0..n)
            .map(|i| rng.random::<f64>() < sigmoid(0.5 + 1.5 * w[(i, 1)] - w[(i, 2)]))
            .collect();
        let cfg = PropensityConfig::default();
        let fit = fit_logistic(&c, &w, &cfg).unwrap();
        assert!(fit.converged);
        assert!(score(&c, &w, &fit.coef).amax() <= 1e-6);
        // iterating with a capped budget never lowers the likelihood
        let mut last = f64::NEG_INFINITY;
        for max_iter in 1..8 {
            let capped = fit_logistic(&c, &w, &PropensityConfig { max_iter, ..cfg }).unwrap();
            let ll = log_likelihood(&c, &w, &capped.coef);
            assert!(ll >= last - 1e-12);
            last = ll;
        }
    }

    #[test]
    fn mar_design_recovers_propensity_at_zero() {
        // P(C = 0) = e^x / (2 (1 + e^x)) gives delta(0) = 0.75
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let c: Vec<bool> = x
            .iter()
            .map(|&xi| rng.random::<f64>() >= xi.exp() / (2.0 * (1.0 + xi.exp())))
            .collect();
        let w = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { x[i] });
        let fit = fit_logistic(&c, &w, &PropensityConfig::default()).unwrap();
        let at_zero = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let d0 = fit.predict(&at_zero).unwrap()[0];
        // delta-method standard error of the fitted probability at x = 0
        let eta = &w * &fit.coef;
        let mut info = DMatrix::zeros(2, 2);
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let row = w.row(i);
            info += row.transpose() * row * (p * (1.0 - p));
        }
        let cov = info.try_inverse().unwrap();
        let se_eta = cov[(0, 0)].sqrt();
        let se = d0 * (1.0 - d0) * se_eta;
        assert!((d0 - 0.75).abs() <= 3.0 * se, "d0 = {d0}, se = {se}");
    }

    /// Coarse-to-fine lattice search; the log-likelihood is concave so the
    /// 1e-3 lattice around the coarse optimum contains the global maximiser.
    fn grid_oracle(c: &[bool], w: &DMatrix<f64>) -> DVector<f64> {
        let q = w.ncols();
        let eval = |b: &[f64]| log_likelihood(c, w, &DVector::from_column_slice(b));
        let search = |center: &[f64], half: f64, step: f64| -> Vec<f64> {
            let m = (2.0 * half / step).round() as i64;
            let mut best = (f64::NEG_INFINITY, center.to_vec());
            let mut idx = vec![0i64; q];
            loop {
                let b: Vec<f64> = (0..q).map(|k| center[k] - half + idx[k] as f64 * step).collect();
                let v = eval(&b);
                if v > best.0 {
                    best = (v, b);
                }
                let mut k = 0;
                loop {
                    if k == q {
                        return best.1;
                    }
                    idx[k] += 1;
                    if idx[k] <= m {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
            }
        };
        let coarse = search(&vec![0.0; q], 6.0, 0.05);
        DVector::from_vec(search(&coarse, 0.1, 1e-3))
    }

    #[test]
    fn agrees_with_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..3 {
            let n = 20;
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let c: Vec<bool> = x.iter().map(|&xi| rng.random::<f64>() < sigmoid(0.3 + 0.8 * xi)).collect();
            if c.iter().all(|&v| v) || c.iter().all(|&v| !v) {
                continue;
            }
            let w = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { x[i] });
            let fit = fit_logistic(&c, &w, &PropensityConfig::default()).unwrap();
            let oracle = grid_oracle(&c, &w);
            for k in 0..2 {
                assert!(
                    (fit.coef[k] - oracle[k]).abs() <= 2e-3,
                    "trial {trial}: irls {} vs grid {}",
                    fit.coef[k],
                    oracle[k]
                );
            }
        }
    }

    #[test]
    fn clipping_floor_is_enforced() {
        let n = 40;
        let w = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { i as f64 / 4.0 });
        // mostly missing at low x, observed at high x, with overlap
        let c: Vec<bool> = (0..n).map(|i| i > 30 || i == 3).collect();
        let cfg = PropensityConfig {
            clip_floor: 0.2,
            ..PropensityConfig::default()
        };
        let fit = fit_logistic(&c, &w, &cfg).unwrap();
        assert!(fit.delta_hat.iter().all(|&d| (0.2..=1.0).contains(&d)));
        assert!(fit.delta_hat.iter().any(|&d| d == 0.2));
    }

    #[test]
    fn perfect_separation_diverges() {
        let n = 10;
        let w = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { i as f64 });
        let c: Vec<bool> = (0..n).map(|i| i >= 5).collect();
        let res = fit_logistic(&c, &w, &PropensityConfig { max_iter: 500, ..Default::default() });
        match res {
            Err(Error::Divergence { .. }) => {}
            Ok(fit) => {
                assert!(fit.separated);
                assert!(fit.delta_hat.iter().take(5).all(|&d| d == 0.01));
                assert!(fit.delta_hat.iter().skip(5).all(|&d| d > 0.999));
            }
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
