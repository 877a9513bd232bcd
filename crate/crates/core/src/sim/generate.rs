use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{NoiseCov, SimConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{substream, tag};

/// Draws noise rows with a fixed covariance.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    p: usize,
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    /// The AR(1) Cholesky factor, applied as the usual recursion.
    Ar1 { rho: f64, innov: f64 },
    Factor(DMatrix<f64>),
}

impl NoiseSampler {
    pub fn new(cov: &NoiseCov, p: usize) -> Result<Self> {
        let kind = match cov {
            NoiseCov::Ar1(rho) => SamplerKind::Ar1 {
                rho: *rho,
                innov: (1.0 - rho * rho).sqrt(),
            },
            NoiseCov::Matrix(m) => {
                if m.shape() != (p, p) {
                    return Err(Error::Shape(format!("covariance is {}×{}, p = {p}", m.nrows(), m.ncols())));
                }
                let chol = m.clone().cholesky().or_else(|| {
                    let jittered = m + DMatrix::identity(p, p) * 1e-8;
                    jittered.cholesky()
                });
                SamplerKind::Factor(chol.ok_or(Error::NotPositiveDefinite)?.l())
            }
        };
        Ok(Self { p, kind })
    }

    /// `n` rows of correlated noise. With `skewed`, each column is shifted
    /// so its minimum equals `shift`, log-transformed and recentred.
    pub fn sample<R: Rng>(&self, n: usize, skewed: bool, shift: f64, rng: &mut R) -> DMatrix<f64> {
        let p = self.p;
        let mut e = DMatrix::zeros(n, p);
        let mut z = DVector::zeros(p);
        for i in 0..n {
            for k in 0..p {
                z[k] = rng.sample::<f64, _>(StandardNormal);
            }
            match &self.kind {
                SamplerKind::Ar1 { rho, innov } => {
                    let mut prev = z[0];
                    e[(i, 0)] = prev;
                    for k in 1..p {
                        prev = rho * prev + innov * z[k];
                        e[(i, k)] = prev;
                    }
                }
                SamplerKind::Factor(l) => {
                    let row = l * &z;
                    for k in 0..p {
                        e[(i, k)] = row[k];
                    }
                }
            }
        }
        if skewed {
            for mut col in e.column_iter_mut() {
                let min = col.min();
                col.apply(|v| *v = (*v - min + shift).ln());
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
        }
        e
    }
}

/// Convenience wrapper drawing `n` rows from the noise stream of `seed`.
pub fn gen_noise(n: usize, p: usize, cov: &NoiseCov, skewed: bool, seed: u64) -> Result<DMatrix<f64>> {
    let sampler = NoiseSampler::new(cov, p)?;
    Ok(sampler.sample(n, skewed, 0.1, &mut substream(seed, 0, tag::NOISE_BASE)))
}

/// Ground truth behind one simulated dataset.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub y_full: DMatrix<f64>,
    /// Signal columns, ascending.
    pub signal_set: Vec<usize>,
    pub a: Vec<f64>,
    pub x: Vec<f64>,
    pub epsilon: DMatrix<f64>,
    /// True coefficient of `a` per column.
    pub beta_a: Vec<f64>,
}

impl SimTruth {
    /// Noise-free mean `E[y_ij | x_i, a_i]`.
    pub fn mean(&self) -> DMatrix<f64> {
        &self.y_full - &self.epsilon
    }

    pub fn is_signal(&self, j: usize) -> bool {
        self.signal_set.binary_search(&j).is_ok()
    }
}

fn mar_missing_prob(x: f64) -> f64 {
    x.exp() / (2.0 * (1.0 + x.exp()))
}

/// Probability that each cell is observed.
pub fn true_propensity(cfg: &SimConfig, truth: &SimTruth) -> DMatrix<f64> {
    let (n, p) = truth.y_full.shape();
    DMatrix::from_fn(n, p, |i, _| {
        if cfg.is_mar() {
            1.0 - mar_missing_prob(truth.x[i])
        } else {
            1.0 - cfg.mcar_prob
        }
    })
}

/// Repetition `rep` of the configured model.
pub fn gen_dataset(cfg: &SimConfig, rep: usize) -> Result<(Dataset, SimTruth)> {
    let sampler = NoiseSampler::new(&cfg.noise_cov, cfg.p)?;
    gen_dataset_with(cfg, &sampler, rep)
}

pub(crate) fn gen_dataset_with(cfg: &SimConfig, sampler: &NoiseSampler, rep: usize) -> Result<(Dataset, SimTruth)> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let (seed, rep) = (cfg.seed, rep as u64);

    let mut a = vec![0.0; n];
    let cases = ((n as f64) / 2.0).round() as usize;
    for i in index::sample(&mut substream(seed, rep, tag::LABELS), n, cases) {
        a[i] = 1.0;
    }
    let mut rng = substream(seed, rep, tag::COVARIATE);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut signal_set = index::sample(&mut substream(seed, rep, tag::SIGNALS), p, cfg.n_signals()).into_vec();
    signal_set.sort_unstable();

    let c = cfg.signal_strength();
    let mut beta_a = vec![0.0; p];
    for &j in &signal_set {
        beta_a[j] = c;
    }
    let epsilon = sampler.sample(n, cfg.model == 4, cfg.skew_shift, &mut substream(seed, rep, tag::NOISE_BASE));
    let slope_x = if cfg.model == 1 { 0.0 } else { 1.0 };
    let y_full = DMatrix::from_fn(n, p, |i, j| slope_x * x[i] + beta_a[j] * a[i] + epsilon[(i, j)]);

    let mut mask = DMatrix::from_element(n, p, true);
    for j in 0..p {
        let mut rng = substream(seed, rep, tag::MASK_BASE + j as u64);
        for i in 0..n {
            let miss = if cfg.is_mar() {
                mar_missing_prob(x[i])
            } else {
                cfg.mcar_prob
            };
            mask[(i, j)] = rng.random::<f64>() >= miss;
        }
    }
    let y_obs = DMatrix::from_fn(n, p, |i, j| if mask[(i, j)] { y_full[(i, j)] } else { f64::NAN });

    let q = cfg.covariate_names().len();
    let w = DMatrix::from_fn(n, q, |i, k| match (k, q) {
        (0, _) => 1.0,
        (1, 3) => x[i],
        _ => a[i],
    });
    let d = Dataset::new(
        y_obs,
        mask,
        w,
        cfg.covariate_names(),
        true,
        (0..p).map(|j| format!("pep{j}")).collect(),
        (0..n).map(|i| format!("s{i}")).collect(),
    )?;
    Ok((
        d,
        SimTruth {
            y_full,
            signal_set,
            a,
            x,
            epsilon,
            beta_a,
        },
    ))
}

/// `E[y_ij | x_i, a_i, observed y_il for l != j]` under Gaussian noise.
///
/// Per row, with `K` the inverse of the observed block of the covariance:
/// masked cells get `Sigma_jO K e_O`, observed cells the leave-one-out
/// form `e_j - (K e_O)_j / K_jj`.
pub fn oracle_conditional_mean(cfg: &SimConfig, d: &Dataset, truth: &SimTruth) -> Result<DMatrix<f64>> {
    if cfg.model == 4 {
        return Err(Error::InvalidArgument(
            "the Gaussian conditional mean is not the oracle for skewed noise".into(),
        ));
    }
    let sigma = cfg.noise_cov.covariance(cfg.p);
    let mean = truth.mean();
    let (n, p) = truth.y_full.shape();
    let mut out = mean.clone();
    for i in 0..n {
        let obs: Vec<usize> = (0..p).filter(|&j| d.is_observed(i, j)).collect();
        if obs.is_empty() {
            continue;
        }
        let s_oo = DMatrix::from_fn(obs.len(), obs.len(), |a, b| sigma[(obs[a], obs[b])]);
        let k = crate::linalg::spd_inverse(&s_oo, "observed noise covariance")?;
        let e_o = DVector::from_fn(obs.len(), |a, _| truth.epsilon[(i, obs[a])]);
        let ke = &k * &e_o;
        let mut pos = 0;
        for j in 0..p {
            let cond = if pos < obs.len() && obs[pos] == j {
                let v = e_o[pos] - ke[pos] / k[(pos, pos)];
                pos += 1;
                v
            } else {
                obs.iter().enumerate().map(|(a, &l)| sigma[(j, l)] * ke[a]).sum()
            };
            out[(i, j)] += cond;
        }
    }
    Ok(out)
}
