//! The `drpi` executable: `analyze`, `simulate` and `toy-power`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

pub mod args;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::Parser;
use log::{info, warn, LevelFilter};

use drpi::data::{load_dataset, read_numeric_table, LoadOptions, MethodKind};
use drpi::imputers::{load_external_nu, ImputerBackend, ImputerConfig};
use drpi::inference::{infer_all_with, infer_cross_fit, AnalysisConfig, Nuisances, VarianceMode};
use drpi::propensity::PropensityConfig;
use drpi::sim::{
    load_covariance, run_benchmark, toy_power_experiment, write_bench_csv, write_power_csv, NoiseCov, SimConfig,
};

use args::{AnalyzeArgs, Cli, Command, ImputerArgs, PropensityArgs, SimulateArgs, ToyPowerArgs};
use config::FileConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Lib(#[from] drpi::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Lib(e) if e.is_numerical() => 3,
            CliError::Lib(_) => 2,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Library argument checks reported as usage errors.
fn as_usage(e: drpi::Error) -> CliError {
    match e {
        drpi::Error::InvalidArgument(m) => CliError::Usage(m),
        other => CliError::Lib(other),
    }
}

/// Parse `argv` (including the program name), run the subcommand and return
/// the process exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(cli: &Cli, file: &FileConfig) -> Result<(), CliError> {
    let level = if cli.quiet || file.quiet == Some(true) {
        LevelFilter::Warn
    } else {
        match cli.log_level.as_ref().or(file.log_level.as_ref()) {
            Some(s) => LevelFilter::from_str(s).map_err(|_| usage(format!("unknown log level '{s}'")))?,
            None => LevelFilter::Info,
        }
    };
    // a second initialisation (tests calling in-process) keeps the first logger
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    init_logging(&cli, &file)?;
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| usage(format!("cannot start {threads} threads: {e}")))?;
    match cli.command {
        Command::Analyze(mut a) => {
            a.fill_from(&file);
            pool.install(|| analyze(a))
        }
        Command::Simulate(mut a) => {
            a.fill_from(&file);
            pool.install(|| simulate(a))
        }
        Command::ToyPower(mut a) => {
            a.fill_from(&file);
            pool.install(|| toy_power(a))
        }
    }
}

fn parse<T: FromStr<Err = drpi::Error>>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(as_usage)
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// `None` for `--imputer external`.
fn imputer_config(a: &ImputerArgs) -> Result<Option<ImputerConfig>, CliError> {
    let name = a.imputer.as_deref().unwrap_or("soft");
    if name == "external" {
        return Ok(None);
    }
    let mut cfg = ImputerConfig::new(parse::<ImputerBackend>(name)?);
    if let Some(l) = a.imputer_lambda {
        if !(l >= 0.0) {
            return Err(usage(format!("--imputer-lambda must be non-negative, got {l}")));
        }
        cfg.rank_penalty = Some(l);
    }
    if let Some(r) = a.imputer_rank {
        cfg.max_rank = r;
    }
    if let Some(k) = a.imputer_k {
        cfg.k_neighbors = k;
    }
    if let Some(m) = a.imputer_max_iter {
        cfg.max_iter = m;
    }
    if let Some(t) = a.imputer_tol {
        cfg.tol = t;
    }
    Ok(Some(cfg))
}

fn propensity_config(a: &PropensityArgs) -> Result<PropensityConfig, CliError> {
    let mut cfg = PropensityConfig::default();
    if let Some(t) = a.prop_tol {
        cfg.tol = t;
    }
    if let Some(m) = a.prop_max_iter {
        cfg.max_iter = m;
    }
    if let Some(c) = a.prop_clip {
        if !(c > 0.0 && c < 1.0) {
            return Err(usage(format!("--prop-clip must lie in (0, 1), got {c}")));
        }
        cfg.clip_floor = c;
    }
    Ok(cfg)
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let outcomes = a.outcomes.as_deref().ok_or_else(|| usage("missing required --outcomes"))?;
    let covariates = a.covariates.as_deref().ok_or_else(|| usage("missing required --covariates"))?;
    let target = a.target.clone().ok_or_else(|| usage("missing required --target"))?;
    let method: MethodKind = parse(a.method.as_deref().unwrap_or("dr_uw"))?;
    let imputer = imputer_config(&a.imputer)?;
    let alpha = a.alpha.unwrap_or(0.05);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    if method == MethodKind::Full && a.oracle.is_none() {
        return Err(usage("--method full needs the complete outcomes via --oracle"));
    }
    if a.oracle.is_some() && method != MethodKind::Full {
        return Err(usage("--oracle is only used by --method full"));
    }
    match (&imputer, &a.external_nu) {
        (None, None) => return Err(usage("--imputer external needs --external-nu")),
        (Some(_), Some(_)) => return Err(usage("--external-nu needs --imputer external")),
        (None, Some(_)) if !method.uses_augmented_imputer() => {
            return Err(usage(format!("method {method} does not use the augmented imputer")))
        }
        _ => {}
    }
    if let Some(k) = a.cross_fit {
        if !method.is_doubly_robust() {
            return Err(usage(format!("--cross-fit applies to dr_w and dr_uw, not {method}")));
        }
        if imputer.is_none() {
            return Err(usage("--cross-fit refits the imputer and cannot use --imputer external"));
        }
        if k < 2 {
            return Err(usage(format!("--cross-fit needs at least 2 folds, got {k}")));
        }
    }
    let rate_threshold = a.rate_threshold.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&rate_threshold) {
        return Err(usage(format!("--rate-threshold must lie in [0, 1], got {rate_threshold}")));
    }
    let cfg = AnalysisConfig {
        alpha,
        variance: a.variance.as_deref().map(parse::<VarianceMode>).transpose()?,
        propensity: propensity_config(&a.propensity)?,
        imputer: imputer.clone().unwrap_or_default(),
        rate_threshold,
        ..AnalysisConfig::new(&target)
    };

    let opts = LoadOptions {
        missing_token: a.missing_token.clone().unwrap_or_else(|| LoadOptions::default().missing_token),
        add_intercept: !a.no_intercept,
        mask_path: a.mask.clone(),
    };
    let d = load_dataset(outcomes, covariates, &opts)?;
    info!(
        "loaded {} samples × {} peptides, {} covariates",
        d.n_samples(),
        d.n_peptides(),
        d.n_covariates()
    );
    let mut supplied = Nuisances::default();
    if let Some(path) = &a.oracle {
        let table = read_numeric_table(path)?;
        if table.header.as_slice() != d.peptide_ids() || table.values.nrows() != d.n_samples() {
            return Err(drpi::Error::Shape(format!("{} does not match the outcome table", path.display())).into());
        }
        supplied = supplied.with_oracle(table.values);
    }
    if let Some(path) = &a.external_nu {
        supplied = supplied.with_nu(load_external_nu(path, &d)?.nu_hat);
    }

    let report = match a.cross_fit {
        Some(k) => infer_cross_fit(&d, k, method, &cfg)?,
        None => infer_all_with(&d, method, &cfg, supplied)?,
    };
    for s in &report.skipped {
        warn!("skipped {}: {:?}", s.peptide_id, s.reason);
    }
    let mut selected = vec![false; report.results.len()];
    for &k in &report.selection.selected {
        selected[k] = true;
    }
    info!(
        "{}: {} of {} peptides selected at q <= {alpha}{}",
        method,
        report.selection.selected.len(),
        report.results.len(),
        report
            .selection
            .mirror_rate
            .map(|m| format!(", mirror rate {m:.3}"))
            .unwrap_or_default()
    );
    output::write_results(&report.results, &selected, open_output(a.out.as_deref())?)?;
    if let Some(path) = &a.volcano {
        output::emit_volcano_data(&report.results, &selected, path)?;
    }
    Ok(())
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| usage(format!("bad {what} '{t}'"))))
        .collect()
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = SimConfig::preset(a.preset.as_deref().unwrap_or("desk"), a.model.unwrap_or(3)).map_err(as_usage)?;
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { cfg.$field = v; } )* };
    }
    set!(n, p, reps, seed, signal_frac, mcar_prob, skew_shift);
    if a.signal_c.is_some() {
        cfg.signal_c = a.signal_c;
    }
    cfg.cross_fit = a.cross_fit;
    match (a.ar1, &a.cov_csv) {
        (Some(_), Some(_)) => return Err(usage("--ar1 and --cov-csv are mutually exclusive")),
        (Some(rho), None) => cfg.noise_cov = NoiseCov::Ar1(rho),
        (None, Some(path)) => cfg.noise_cov = NoiseCov::Matrix(load_covariance(path)?),
        (None, None) => {}
    }
    if let Some(c) = &a.cutoffs {
        cfg.cutoffs = parse_list(c, "cutoff")?;
    }
    cfg.variance = a.variance.as_deref().map(parse::<VarianceMode>).transpose()?;
    cfg.imputer = imputer_config(&a.imputer)?.ok_or_else(|| usage("simulate cannot use --imputer external"))?;
    cfg.propensity = propensity_config(&a.propensity)?;
    let methods: Vec<MethodKind> = match &a.methods {
        Some(m) => m.split(',').map(|t| parse(t.trim())).collect::<Result<_, _>>()?,
        None => MethodKind::ALL.to_vec(),
    };
    if methods.is_empty() {
        return Err(usage("--methods lists no method"));
    }
    cfg.validate().map_err(as_usage)?;
    info!(
        "model {}, n = {}, p = {}, {} repetitions on {} threads",
        cfg.model,
        cfg.n,
        cfg.p,
        cfg.reps,
        rayon::current_num_threads()
    );
    let result = run_benchmark(&cfg, &methods)?;
    if !result.failures.is_empty() {
        warn!("{} repetitions failed", result.failures.len());
    }
    write_bench_csv(&result, open_output(a.out.as_deref())?)?;
    Ok(())
}

/// `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 1 {
        return parse_list(s, "grid value");
    }
    let bad = || usage(format!("bad grid '{s}', expected start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    let (start, stop, step) = (v[0], v[1], v[2]);
    if !(step > 0.0) || stop < start {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    // rounding keeps 0.1 + 2 * 0.1 printing as 0.3
    Ok((0..count)
        .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

fn toy_power(a: ToyPowerArgs) -> Result<(), CliError> {
    let grid = parse_grid(a.rho.as_deref().unwrap_or("0.1:1.0:0.1"))?;
    let n = a.n.unwrap_or(200);
    let reps = a.reps.unwrap_or(5000);
    info!("toy power over {} correlations, {reps} repetitions", grid.len());
    let rows = toy_power_experiment(
        &grid,
        n,
        a.beta.unwrap_or(0.2),
        a.delta.unwrap_or(0.7),
        reps,
        a.seed.unwrap_or(7),
    )
    .map_err(as_usage)?;
    write_power_csv(&rows, open_output(a.out.as_deref())?)?;
    Ok(())
}
