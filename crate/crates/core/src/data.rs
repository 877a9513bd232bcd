//! Typed containers for outcomes, masks, covariates and results, plus CSV I/O.
//!
//! Outcome CSVs have one column per peptide and one row per sample. Missing
//! cells are empty or equal to a configurable token; the mask is kept as an
//! explicit boolean matrix and values stored at masked positions are never
//! read by any estimator.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::numeric_rank;

pub const INTERCEPT_NAME: &str = "(Intercept)";

/// Default observation rate a column needs to feed the imputer.
pub const DEFAULT_FEED_THRESHOLD: f64 = 0.2;

/// Outcome matrix with its observability mask and covariates.
#[derive(Debug, Clone)]
pub struct Dataset {
    y_obs: DMatrix<f64>,
    mask: DMatrix<bool>,
    w: DMatrix<f64>,
    covariate_names: Vec<String>,
    has_intercept: bool,
    peptide_ids: Vec<String>,
    sample_ids: Vec<String>,
}

impl Dataset {
    /// Validates shapes, observed values and the rank of `w`.
    ///
    /// `has_intercept` records that column 0 of `w` is an injected intercept
    /// (it is dropped again by [`write_dataset`]).
    pub fn new(
        y_obs: DMatrix<f64>,
        mask: DMatrix<bool>,
        w: DMatrix<f64>,
        covariate_names: Vec<String>,
        has_intercept: bool,
        peptide_ids: Vec<String>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = y_obs.shape();
        if mask.shape() != (n, p) {
            return Err(Error::Shape(format!(
                "mask is {}x{}, outcomes are {n}x{p}",
                mask.nrows(),
                mask.ncols()
            )));
        }
        if w.nrows() != n {
            return Err(Error::Shape(format!("covariates have {} rows, outcomes {n}", w.nrows())));
        }
        if covariate_names.len() != w.ncols() {
            return Err(Error::Shape("covariate name count differs from covariate columns".into()));
        }
        if peptide_ids.len() != p || sample_ids.len() != n {
            return Err(Error::Shape("label count differs from matrix shape".into()));
        }
        let q = w.ncols();
        if n <= q {
            return Err(Error::TooFewSamples { n, q });
        }
        for j in 0..p {
            for i in 0..n {
                if mask[(i, j)] && !y_obs[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, column: j });
                }
            }
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("covariates must be finite".into()));
        }
        let rank = numeric_rank(&w);
        if rank < q {
            return Err(Error::RankDeficient { rank, columns: q });
        }
        let d = Self {
            y_obs,
            mask,
            w,
            covariate_names,
            has_intercept,
            peptide_ids,
            sample_ids,
        };
        for j in d.all_missing_columns() {
            warn!("column '{}' has no observed values; it will be skipped by inference", d.peptide_ids[j]);
        }
        Ok(d)
    }

    /// Fully observed dataset with generated labels.
    pub fn fully_observed(y: DMatrix<f64>, w: DMatrix<f64>, covariate_names: Vec<String>) -> Result<Self> {
        let mask = DMatrix::from_element(y.nrows(), y.ncols(), true);
        let peptide_ids = (0..y.ncols()).map(|j| format!("pep{j}")).collect();
        let sample_ids = (0..y.nrows()).map(|i| format!("s{i}")).collect();
        Self::new(y, mask, w, covariate_names, false, peptide_ids, sample_ids)
    }

    /// Same as [`Dataset::fully_observed`] with an explicit mask.
    pub fn with_mask(y: DMatrix<f64>, mask: DMatrix<bool>, w: DMatrix<f64>, covariate_names: Vec<String>) -> Result<Self> {
        let peptide_ids = (0..y.ncols()).map(|j| format!("pep{j}")).collect();
        let sample_ids = (0..y.nrows()).map(|i| format!("s{i}")).collect();
        Self::new(y, mask, w, covariate_names, false, peptide_ids, sample_ids)
    }

    pub fn n_samples(&self) -> usize {
        self.y_obs.nrows()
    }

    pub fn n_peptides(&self) -> usize {
        self.y_obs.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.w.ncols()
    }

    /// Raw outcome storage. Entries at masked cells are unspecified.
    pub fn y_obs(&self) -> &DMatrix<f64> {
        &self.y_obs
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn has_intercept(&self) -> bool {
        self.has_intercept
    }

    pub fn peptide_ids(&self) -> &[String] {
        &self.peptide_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    #[inline]
    pub fn observed(&self, i: usize, j: usize) -> Option<f64> {
        self.mask[(i, j)].then(|| self.y_obs[(i, j)])
    }

    /// Mask column `j` as a vector of flags.
    pub fn mask_column(&self, j: usize) -> Vec<bool> {
        self.mask.column(j).iter().copied().collect()
    }

    /// Rows observed in column `j`.
    pub fn observed_rows(&self, j: usize) -> Vec<usize> {
        (0..self.n_samples()).filter(|&i| self.mask[(i, j)]).collect()
    }

    pub fn observed_count(&self, j: usize) -> usize {
        self.mask.column(j).iter().filter(|&&m| m).count()
    }

    pub fn all_missing_columns(&self) -> Vec<usize> {
        (0..self.n_peptides()).filter(|&j| self.observed_count(j) == 0).collect()
    }

    /// Index of a covariate by name.
    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    pub fn peptide_index(&self, id: &str) -> Option<usize> {
        self.peptide_ids.iter().position(|p| p == id)
    }

    /// Column subset, in the order given.
    pub fn select_columns(&self, columns: &[usize]) -> Dataset {
        let n = self.n_samples();
        Dataset {
            y_obs: DMatrix::from_fn(n, columns.len(), |i, k| self.y_obs[(i, columns[k])]),
            mask: DMatrix::from_fn(n, columns.len(), |i, k| self.mask[(i, columns[k])]),
            w: self.w.clone(),
            covariate_names: self.covariate_names.clone(),
            has_intercept: self.has_intercept,
            peptide_ids: columns.iter().map(|&j| self.peptide_ids[j].clone()).collect(),
            sample_ids: self.sample_ids.clone(),
        }
    }

    /// Row subset, in the order given. Fails if the covariates lose rank.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let p = self.n_peptides();
        Dataset::new(
            DMatrix::from_fn(rows.len(), p, |k, j| self.y_obs[(rows[k], j)]),
            DMatrix::from_fn(rows.len(), p, |k, j| self.mask[(rows[k], j)]),
            crate::linalg::select_rows(&self.w, rows),
            self.covariate_names.clone(),
            self.has_intercept,
            self.peptide_ids.clone(),
            rows.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        )
    }

    /// Copy with the values at masked cells replaced by `fill(i, j)`.
    /// The mask is unchanged; used to check that estimators never read them.
    pub fn with_masked_values(&self, mut fill: impl FnMut(usize, usize) -> f64) -> Dataset {
        let mut d = self.clone();
        for j in 0..d.n_peptides() {
            for i in 0..d.n_samples() {
                if !d.mask[(i, j)] {
                    d.y_obs[(i, j)] = fill(i, j);
                }
            }
        }
        d
    }
}

/// Estimator tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    /// Oracle regression on the complete matrix (simulation only).
    Full,
    /// Regression on observed rows only.
    Complete,
    /// Regression of the fitted matrix.
    Plugin,
    /// Observed values kept, missing cells imputed.
    PluginMissing,
    /// Doubly robust pseudo-outcome with a covariate-only outcome model.
    DrW,
    /// Doubly robust pseudo-outcome with the augmented outcome model.
    DrUw,
}

impl MethodKind {
    pub const ALL: [MethodKind; 6] = [
        MethodKind::Full,
        MethodKind::Complete,
        MethodKind::Plugin,
        MethodKind::PluginMissing,
        MethodKind::DrW,
        MethodKind::DrUw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::Full => "full",
            MethodKind::Complete => "complete",
            MethodKind::Plugin => "plugin",
            MethodKind::PluginMissing => "plugin_missing",
            MethodKind::DrW => "dr_w",
            MethodKind::DrUw => "dr_uw",
        }
    }

    pub fn is_doubly_robust(self) -> bool {
        matches!(self, MethodKind::DrW | MethodKind::DrUw)
    }

    /// Whether the method consumes the augmented imputation.
    pub fn uses_augmented_imputer(self) -> bool {
        matches!(self, MethodKind::Plugin | MethodKind::PluginMissing | MethodKind::DrUw)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(MethodKind::Full),
            "complete" => Ok(MethodKind::Complete),
            "plugin" => Ok(MethodKind::Plugin),
            "plugin_missing" | "pluginmissing" => Ok(MethodKind::PluginMissing),
            "dr_w" | "drw" => Ok(MethodKind::DrW),
            "dr_uw" | "druw" => Ok(MethodKind::DrUw),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Per-peptide test result for the covariate of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct PeptideInference {
    pub peptide_id: String,
    pub method: MethodKind,
    pub beta: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub q_value: f64,
    /// Set when `se == 0`; the p-value is then 1 for `beta == 0` and 0 otherwise.
    pub degenerate: bool,
}

/// CSV loading options.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Cell content meaning "missing", in addition to empty cells.
    pub missing_token: String,
    /// Prepend an all-ones intercept column to the covariates.
    pub add_intercept: bool,
    /// 0/1 matrix overriding token-based missingness detection.
    pub mask_path: Option<std::path::PathBuf>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            missing_token: "NA".to_string(),
            add_intercept: true,
            mask_path: None,
        }
    }
}

struct RawTable {
    header: Vec<String>,
    sample_ids: Option<Vec<String>>,
    rows: Vec<Vec<String>>,
}

fn is_sample_id_header(h: &str) -> bool {
    let h = h.trim().to_ascii_lowercase();
    h.is_empty() || h == "sample_id" || h == "sample"
}

fn read_table(path: &Path) -> Result<RawTable> {
    let display = path.display().to_string();
    let csv_err = |source| Error::Csv { path: display.clone(), source };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path: display.clone(), source },
            kind => Error::InvalidArgument(format!("{display}: {kind:?}")),
        })?;
    let mut header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let has_ids = header.first().map(|h| is_sample_id_header(h)).unwrap_or(false);
    if has_ids {
        header.remove(0);
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let mut cells: Vec<String> = record.iter().map(str::to_string).collect();
        if has_ids {
            ids.push(cells.remove(0));
        }
        if cells.len() != header.len() {
            return Err(Error::Shape(format!(
                "{display}: row {} has {} cells, header has {}",
                rows.len() + 1,
                cells.len(),
                header.len()
            )));
        }
        rows.push(cells);
    }
    Ok(RawTable {
        header,
        sample_ids: has_ids.then_some(ids),
        rows,
    })
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

/// A fully numeric CSV table: column names, optional sample ids and values.
pub struct NumericTable {
    pub header: Vec<String>,
    pub sample_ids: Option<Vec<String>>,
    pub values: DMatrix<f64>,
}

/// Read a CSV whose every cell is a finite number.
pub fn read_numeric_table(path: &Path) -> Result<NumericTable> {
    let table = read_table(path)?;
    let (n, p) = (table.rows.len(), table.header.len());
    let mut values = DMatrix::zeros(n, p);
    for (i, row) in table.rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let v = parse_cell(cell, i, &table.header[j])?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, column: j });
            }
            values[(i, j)] = v;
        }
    }
    Ok(NumericTable {
        header: table.header,
        sample_ids: table.sample_ids,
        values,
    })
}

/// Load outcomes and covariates from CSV files.
pub fn load_dataset(outcome_path: &Path, covariate_path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let outcomes = read_table(outcome_path)?;
    let covariates = read_table(covariate_path)?;
    let n = outcomes.rows.len();
    if covariates.rows.len() != n {
        return Err(Error::Shape(format!(
            "outcomes have {n} rows, covariates have {}",
            covariates.rows.len()
        )));
    }
    if let (Some(a), Some(b)) = (&outcomes.sample_ids, &covariates.sample_ids) {
        if a != b {
            return Err(Error::Shape("sample ids differ between outcome and covariate files".into()));
        }
    }
    let p = outcomes.header.len();

    let explicit_mask = match &opts.mask_path {
        Some(path) => {
            let table = read_table(path)?;
            if table.rows.len() != n || table.header.len() != p {
                return Err(Error::Shape("mask file shape differs from outcomes".into()));
            }
            let mut m = DMatrix::from_element(n, p, false);
            for (i, row) in table.rows.iter().enumerate() {
                for (j, cell) in row.iter().enumerate() {
                    m[(i, j)] = match cell.as_str() {
                        "1" => true,
                        "0" => false,
                        other => {
                            return Err(Error::Parse {
                                row: i,
                                column: table.header[j].clone(),
                                value: other.to_string(),
                            })
                        }
                    };
                }
            }
            Some(m)
        }
        None => None,
    };

    let mut y = DMatrix::from_element(n, p, f64::NAN);
    let mut mask = DMatrix::from_element(n, p, false);
    for (i, row) in outcomes.rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            let observed = match &explicit_mask {
                Some(m) => m[(i, j)],
                None => !(cell.is_empty() || *cell == opts.missing_token),
            };
            if observed {
                y[(i, j)] = parse_cell(cell, i, &outcomes.header[j])?;
                mask[(i, j)] = true;
            }
        }
    }

    let offset = usize::from(opts.add_intercept);
    let q = covariates.header.len() + offset;
    let mut w = DMatrix::from_element(n, q, 1.0);
    for (i, row) in covariates.rows.iter().enumerate() {
        for (k, cell) in row.iter().enumerate() {
            w[(i, k + offset)] = parse_cell(cell, i, &covariates.header[k])?;
        }
    }
    let mut names = Vec::with_capacity(q);
    if opts.add_intercept {
        names.push(INTERCEPT_NAME.to_string());
    }
    names.extend(covariates.header.iter().cloned());

    let sample_ids = outcomes
        .sample_ids
        .or(covariates.sample_ids)
        .unwrap_or_else(|| (0..n).map(|i| format!("s{i}")).collect());
    Dataset::new(y, mask, w, names, opts.add_intercept, outcomes.header, sample_ids)
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| io_error(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_write_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Write outcomes (missing cells empty) and covariates. An injected intercept
/// column is omitted so that [`load_dataset`] with default options restores it.
pub fn write_dataset(d: &Dataset, outcome_path: &Path, covariate_path: &Path) -> Result<()> {
    let mut out = csv_writer(outcome_path)?;
    let err = csv_write_err(outcome_path);
    let mut header = vec!["sample_id".to_string()];
    header.extend(d.peptide_ids.iter().cloned());
    out.write_record(&header).map_err(&err)?;
    for i in 0..d.n_samples() {
        let mut row = vec![d.sample_ids[i].clone()];
        row.extend((0..d.n_peptides()).map(|j| d.observed(i, j).map(|v| v.to_string()).unwrap_or_default()));
        out.write_record(&row).map_err(&err)?;
    }
    out.flush().map_err(|e| io_error(outcome_path, e))?;

    let mut cov = csv_writer(covariate_path)?;
    let err = csv_write_err(covariate_path);
    let start = usize::from(d.has_intercept);
    let mut header = vec!["sample_id".to_string()];
    header.extend(d.covariate_names[start..].iter().cloned());
    cov.write_record(&header).map_err(&err)?;
    for i in 0..d.n_samples() {
        let mut row = vec![d.sample_ids[i].clone()];
        row.extend((start..d.n_covariates()).map(|k| d.w[(i, k)].to_string()));
        cov.write_record(&row).map_err(&err)?;
    }
    cov.flush().map_err(|e| io_error(covariate_path, e))?;
    Ok(())
}

/// Fraction of observed samples per column.
pub fn observation_rate(d: &Dataset) -> Vec<f64> {
    let n = d.n_samples() as f64;
    (0..d.n_peptides()).map(|j| d.observed_count(j) as f64 / n).collect()
}

/// Column split for a thresholded analysis.
#[derive(Debug, Clone)]
pub struct FilteredData {
    /// Columns tested downstream (rate ≥ threshold).
    pub inference: Dataset,
    /// Columns fed to the imputer (rate ≥ feed threshold).
    pub imputation: Dataset,
    pub inference_columns: Vec<usize>,
    pub imputation_columns: Vec<usize>,
}

/// Split columns by observation rate. The imputation set uses
/// `min(threshold, feed_threshold)` so it always contains the inference set.
pub fn filter_by_rate(d: &Dataset, threshold: f64, feed_threshold: f64) -> Result<FilteredData> {
    if !(0.0..=1.0).contains(&threshold) || !(0.0..=1.0).contains(&feed_threshold) {
        return Err(Error::InvalidArgument(format!("thresholds must lie in [0, 1], got {threshold}")));
    }
    let rates = observation_rate(d);
    let feed = threshold.min(feed_threshold);
    let inference_columns: Vec<usize> = (0..rates.len()).filter(|&j| rates[j] >= threshold).collect();
    let imputation_columns: Vec<usize> = (0..rates.len()).filter(|&j| rates[j] >= feed).collect();
    if inference_columns.is_empty() {
        return Err(Error::EmptySelection { threshold });
    }
    Ok(FilteredData {
        inference: d.select_columns(&inference_columns),
        imputation: d.select_columns(&imputation_columns),
        inference_columns,
        imputation_columns,
    })
}
