//! Doubly robust inference on regression coefficients when the outcome
//! matrix has missing cells.
//!
//! Each outcome column is replaced by a pseudo-outcome that combines an
//! imputation `nu_hat` with inverse-probability weighted residuals,
//! `nu_hat + (C / delta_hat) (Y - nu_hat)`, and regressed on the covariates.
//! The estimate stays consistent when either the observation model or the
//! imputation model is right.
//!
//! ```
//! use drpi::data::{Dataset, MethodKind};
//! use drpi::inference::{infer_all, AnalysisConfig};
//! use nalgebra::DMatrix;
//!
//! let n = 40;
//! let w = DMatrix::from_fn(n, 2, |i, k| if k == 0 { 1.0 } else { (i % 2) as f64 });
//! let y = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 + (i % 2) as f64 * j as f64);
//! let mask = DMatrix::from_fn(n, 3, |i, j| (i + j) % 5 != 0);
//! let d = Dataset::with_mask(y, mask, w, vec!["(Intercept)".into(), "a".into()]).unwrap();
//! let report = infer_all(&d, MethodKind::DrW, &AnalysisConfig::new("a")).unwrap();
//! assert_eq!(report.results.len(), 3);
//! ```

pub mod data;
pub mod error;
pub mod imputers;
pub mod inference;
pub mod linalg;
pub mod propensity;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod testing;

pub use error::{Error, Result};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/pseudo-outcomes.md")]
    mod pseudo_outcomes {}
    #[doc = include_str!("../../../book/src/imputers.md")]
    mod imputers {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/multiple-testing.md")]
    mod multiple_testing {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
