//! The detection engine.
//!
//! Stage 1 samples `n_samples` continuations at every grid point. Stage 2
//! visits each trial point (a midpoint between grid points), scores every
//! sample from the `2L` neighbouring grid points under all `2L` parameters,
//! and averages `g` of the segment posterior:
//!
//! ```text
//! J_i = 1/L sum_{T in segment_i} 1/|D| sum_{x in D(T)} g(P(segment_i | x))
//! D_g = (J_left + J_right) / 2
//! ```
//!
//! Because the posterior is computed from exact model probabilities, `D_g` is
//! an unbiased estimate of the dissimilarity between the two segment mixtures.

mod estimate;
mod grid;
mod io;
mod peaks;
mod store;

use thiserror::Error;

use crate::divergence::DivergenceError;
use crate::models::ModelError;

pub use estimate::{
    estimate_curve, exact_curve, exact_trial_estimate, flanking_dissimilarity, run_scan,
    segment_posterior, stage2_estimate, DissimilarityCurve, Estimate,
};
pub use grid::{build_grid, ParameterGrid};
pub use io::{fmt_f64, read_curve_csv, write_curve_csv, write_curve_json};
pub use peaks::{annotate_outliers, detect_peaks, Peak, PeakReport};
pub use store::{stage1_generate, SampleStore};

/// Default number of batches used for standard errors.
pub const DEFAULT_BATCHES: usize = 4;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid is not uniform at index {index}: spacing {found} vs {expected}")]
    NonUniformGrid {
        index: usize,
        expected: f64,
        found: f64,
    },
    #[error("invalid scan settings: {0}")]
    InvalidSettings(String),
    #[error("sample sets differ in size: point {index} has {found}, expected {expected}")]
    UnequalSampleSets {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("model failure at {point}: {source}")]
    Model {
        point: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error("malformed curve file: {0}")]
    MalformedCurve(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ScanError {
    pub(crate) fn at(point: &crate::models::AxisPoint) -> impl FnOnce(ModelError) -> ScanError + '_ {
        move |source| ScanError::Model {
            point: point.to_string(),
            source,
        }
    }
}

pub type Result<T, E = ScanError> = std::result::Result<T, E>;
