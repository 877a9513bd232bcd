use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{pseudo_outcomes, wald_test, Design, VarianceMode};
use crate::rng::{substream, tag};
use crate::stats::mean_and_se;

/// Rejection frequencies at one correlation level. Pairs are `(power, mc_se)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerRow {
    pub rho: f64,
    /// Pseudo-outcome built on `mu = E[Y | W]`.
    pub w: (f64, f64),
    /// Pseudo-outcome built on `nu = E[Y | W, U]`.
    pub uw: (f64, f64),
    /// Test on the complete outcomes.
    pub full: (f64, f64),
}

const LEVEL: f64 = 0.05;

/// `Y = beta W + e`, `U = beta W + e_u` with `corr(e, e_u) = rho`, each
/// outcome observed with known probability `delta`. Regresses each
/// pseudo-outcome on `(1, W)` and records how often `beta = 0` is rejected
/// at level 0.05 with the sandwich test.
///
/// Every correlation level reuses the same draws of `W`, `e`, the
/// independent part of `e_u` and the mask, so the curves differ only
/// through `rho`.
pub fn toy_power_experiment(rho_grid: &[f64], n: usize, beta: f64, delta: f64, reps: usize, seed: u64) -> Result<Vec<PowerRow>> {
    if let Some(&r) = rho_grid.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidArgument(format!("correlation {r} outside [0, 1]")));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("observation probability {delta} outside (0, 1]")));
    }
    if n < 3 || reps == 0 {
        return Err(Error::InvalidArgument("need n >= 3 and at least one repetition".into()));
    }
    // rejections[rep][rho] = (W, UW, full)
    let rejections: Vec<Vec<[bool; 3]>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, rep as u64, tag::COLUMN_BASE);
            let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let e: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let eta: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let c: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < delta).collect();
            let design = Design::new(DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { w[i] }))?;
            let y: Vec<f64> = (0..n).map(|i| beta * w[i] + e[i]).collect();
            let mu: Vec<f64> = w.iter().map(|wi| beta * wi).collect();
            let deltas = vec![delta; n];
            let reject = |response: DVector<f64>| -> Result<bool> {
                let fit = design.fit(&response, VarianceMode::Sandwich)?;
                Ok(wald_test(&fit, 1, response.amax()).3 <= LEVEL)
            };
            let full = reject(DVector::from_column_slice(&y))?;
            let model_w = reject(pseudo_outcomes(&y, &c, &deltas, &mu)?.y_tilde)?;
            rho_grid
                .iter()
                .map(|&rho| {
                    let s = (1.0 - rho * rho).sqrt();
                    // E[Y | W, U] = beta W + rho e_u
                    let nu: Vec<f64> = (0..n).map(|i| mu[i] + rho * (rho * e[i] + s * eta[i])).collect();
                    let model_uw = reject(pseudo_outcomes(&y, &c, &deltas, &nu)?.y_tilde)?;
                    Ok([model_w, model_uw, full])
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(rho_grid
        .iter()
        .enumerate()
        .map(|(k, &rho)| {
            let rate = |m: usize| {
                let hits: Vec<f64> = rejections.iter().map(|r| f64::from(u8::from(r[k][m]))).collect();
                mean_and_se(&hits)
            };
            PowerRow {
                rho,
                w: rate(0),
                uw: rate(1),
                full: rate(2),
            }
        })
        .collect())
}

/// Long-format CSV: `method,rho,metric,value,mc_se` with methods `W`, `UW`, `full`.
pub fn write_power_csv<W: Write>(rows: &[PowerRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |source| Error::Csv {
        path: "<power output>".into(),
        source,
    };
    w.write_record(["method", "rho", "metric", "value", "mc_se"]).map_err(csv_err)?;
    for r in rows {
        for (name, (value, se)) in [("W", r.w), ("UW", r.uw), ("full", r.full)] {
            w.write_record([name, &r.rho.to_string(), "power", &value.to_string(), &se.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: "<power output>".into(),
        source,
    })?;
    Ok(())
}
