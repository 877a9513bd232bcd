use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;

use super::generate::{gen_dataset_with, NoiseSampler};
use super::SimConfig;
use crate::data::MethodKind;
use crate::error::{Error, Result};
use crate::inference::{cross_fit_nuisances, infer_columns, AnalysisConfig, Nuisances};
use crate::stats::{mean_and_se, sample_variance};
use crate::testing::select;

/// Scores of one method in one repetition.
#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub method: MethodKind,
    /// Per cutoff.
    pub fdr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub discoveries: Vec<usize>,
    /// `beta_hat - beta` per column; NaN for skipped columns.
    pub beta_error: Vec<f64>,
}

/// Aggregate over repetitions of one method. Pairs are `(mean, mc_se)`.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: MethodKind,
    pub fdr: Vec<(f64, f64)>,
    pub tpr: Vec<(f64, f64)>,
    pub discoveries: Vec<(f64, f64)>,
    /// Variance of the coefficient estimate across repetitions, averaged
    /// over columns.
    pub beta_var: f64,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub cutoffs: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    pub reps_ok: usize,
    /// Repetitions that failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

impl BenchResult {
    pub fn summary(&self, method: MethodKind) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn analysis_config(cfg: &SimConfig) -> AnalysisConfig {
    AnalysisConfig {
        variance: cfg.variance,
        propensity: cfg.propensity,
        imputer: cfg.imputer.clone(),
        ..AnalysisConfig::new("a")
    }
}

/// Generate repetition `rep` and score every method on it.
pub fn run_rep(cfg: &SimConfig, sampler: &NoiseSampler, rep: usize, methods: &[MethodKind]) -> Result<Vec<RepOutcome>> {
    let (d, truth) = gen_dataset_with(cfg, sampler, rep)?;
    let acfg = analysis_config(cfg);
    let mut supplied = Nuisances::default();
    if methods.contains(&MethodKind::Full) {
        supplied = supplied.with_oracle(truth.y_full.clone());
    }
    let is_dr = |m: &MethodKind| matches!(m, MethodKind::DrW | MethodKind::DrUw);
    let shared: Vec<MethodKind> = match cfg.cross_fit {
        Some(_) => methods.iter().copied().filter(|m| !is_dr(m)).collect(),
        None => methods.to_vec(),
    };
    let nuis = supplied.complete(&d, &shared, &acfg)?;
    let columns: Vec<usize> = (0..d.n_peptides()).collect();
    let n_signals = truth.signal_set.len();
    methods
        .iter()
        .map(|&method| {
            let report = match cfg.cross_fit {
                Some(k) if is_dr(&method) => {
                    infer_columns(&d, &columns, method, &cross_fit_nuisances(&d, k, method, &acfg)?, &acfg)?
                }
                _ => infer_columns(&d, &columns, method, &nuis, &acfg)?,
            };
            let index: Vec<usize> = report
                .results
                .iter()
                .map(|r| d.peptide_index(&r.peptide_id).expect("result ids come from the dataset"))
                .collect();
            let mut beta_error = vec![f64::NAN; d.n_peptides()];
            for (r, &j) in report.results.iter().zip(&index) {
                beta_error[j] = r.beta - truth.beta_a[j];
            }
            let mut fdr = Vec::new();
            let mut tpr = Vec::new();
            let mut discoveries = Vec::new();
            for &alpha in &cfg.cutoffs {
                let chosen = select(&report.selection.q_values, alpha);
                let hits = chosen.iter().filter(|&&k| truth.is_signal(index[k])).count();
                let total = chosen.len();
                fdr.push(if total == 0 { 0.0 } else { (total - hits) as f64 / total as f64 });
                tpr.push(if n_signals == 0 { 0.0 } else { hits as f64 / n_signals as f64 });
                discoveries.push(total);
            }
            Ok(RepOutcome {
                method,
                fdr,
                tpr,
                discoveries,
                beta_error,
            })
        })
        .collect()
}

/// Run all repetitions (in parallel) and aggregate in repetition order.
pub fn run_benchmark(cfg: &SimConfig, methods: &[MethodKind]) -> Result<BenchResult> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    let sampler = NoiseSampler::new(&cfg.noise_cov, cfg.p)?;
    let outcomes: Vec<Result<Vec<RepOutcome>>> =
        (0..cfg.reps).into_par_iter().map(|rep| run_rep(cfg, &sampler, rep, methods)).collect();

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => ok.push(o),
            Err(e) => {
                warn!("repetition {rep} failed: {e}");
                failures.push((rep, e.to_string()));
            }
        }
    }
    if ok.is_empty() {
        return Err(Error::InvalidArgument(format!("all {} repetitions failed", cfg.reps)));
    }
    info!("{} of {} repetitions succeeded", ok.len(), cfg.reps);

    let summaries = methods
        .iter()
        .enumerate()
        .map(|(m, &method)| {
            let per_cutoff = |f: &dyn Fn(&RepOutcome, usize) -> f64| -> Vec<(f64, f64)> {
                (0..cfg.cutoffs.len())
                    .map(|c| mean_and_se(&ok.iter().map(|reps| f(&reps[m], c)).collect::<Vec<_>>()))
                    .collect()
            };
            let column_vars: Vec<f64> = (0..cfg.p)
                .filter_map(|j| {
                    let errors: Vec<f64> =
                        ok.iter().map(|reps| reps[m].beta_error[j]).filter(|v| v.is_finite()).collect();
                    (errors.len() >= 2).then(|| sample_variance(&errors))
                })
                .collect();
            let beta_var = if column_vars.is_empty() {
                f64::NAN
            } else {
                column_vars.iter().sum::<f64>() / column_vars.len() as f64
            };
            MethodSummary {
                method,
                fdr: per_cutoff(&|r, c| r.fdr[c]),
                tpr: per_cutoff(&|r, c| r.tpr[c]),
                discoveries: per_cutoff(&|r, c| r.discoveries[c] as f64),
                beta_var,
            }
        })
        .collect();
    Ok(BenchResult {
        cutoffs: cfg.cutoffs.clone(),
        methods: summaries,
        reps_ok: ok.len(),
        failures,
    })
}

/// Long-format CSV: `method,cutoff,metric,value,mc_se`.
pub fn write_bench_csv<W: Write>(result: &BenchResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |source| Error::Csv {
        path: "<benchmark output>".into(),
        source,
    };
    w.write_record(["method", "cutoff", "metric", "value", "mc_se"]).map_err(csv_err)?;
    for s in &result.methods {
        for (c, alpha) in result.cutoffs.iter().enumerate() {
            for (metric, (value, se)) in [("fdr", s.fdr[c]), ("tpr", s.tpr[c]), ("discoveries", s.discoveries[c])] {
                w.write_record([s.method.as_str(), &alpha.to_string(), metric, &value.to_string(), &se.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.write_record([s.method.as_str(), "", "beta_var", &s.beta_var.to_string(), ""])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<benchmark output>".into(),
        source,
    })?;
    Ok(())
}

/// [`write_bench_csv`] to a file.
pub fn write_bench_csv_file(result: &BenchResult, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_bench_csv(result, file)
}
