use thiserror::Error;

/// Errors produced anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cannot parse cell at row {row}, column '{column}': '{value}'")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-finite observed value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("covariate matrix has rank {rank} < {columns} columns")]
    RankDeficient { rank: usize, columns: usize },

    #[error("need more samples than covariates (n = {n}, q = {q})")]
    TooFewSamples { n: usize, q: usize },

    #[error("unknown covariate '{0}'")]
    UnknownCovariate(String),

    #[error("no columns left after filtering at observation rate {threshold}")]
    EmptySelection { threshold: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("covariance matrix is not positive definite after jitter")]
    NotPositiveDefinite,

    #[error("logistic regression diverged after {iterations} iterations (|coef| = {norm:.3e})")]
    Divergence { iterations: usize, norm: f64 },

    #[error("propensity {value} is below the clip floor {floor}")]
    PropensityBelowFloor { value: f64, floor: f64 },
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::NotPositiveDefinite
                | Error::Divergence { .. }
                | Error::PropensityBelowFloor { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
