use serde::{Deserialize, Serialize};

use super::{flanking_dissimilarity, DissimilarityCurve, ParameterGrid, Result, SampleStore, ScanError};
use crate::divergence::GSpec;
use crate::models::{AutoregressiveModel, AxisKind};
use crate::numeric::median;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub trial_index: usize,
    pub trial_value: f64,
    pub estimate: f64,
    pub stderr: f64,
    /// Height above the higher of the two minima separating it from taller
    /// terrain (or the curve ends).
    pub prominence: f64,
    pub is_outlier_suspect: bool,
    /// Smallest flanking dissimilarity over the two grid points adjacent to
    /// the trial point; `None` until [`annotate_outliers`] runs.
    pub flanking_dissimilarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_grid_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub axis: AxisKind,
    pub g_label: String,
    #[serde(rename = "L")]
    pub segment_len: usize,
    /// Median of the curve.
    pub baseline: f64,
    pub min_prominence_sigmas: f64,
    /// Ascending trial value.
    pub peaks: Vec<Peak>,
}

/// Strict local maxima (plateaus reported at their leftmost point) that
/// exceed the curve median by at least `min_prominence_sigmas` local
/// standard errors.
pub fn detect_peaks(curve: &DissimilarityCurve, min_prominence_sigmas: f64) -> PeakReport {
    let est = &curve.estimates;
    let n = est.len();
    let baseline = if n == 0 { 0.0 } else { median(est) };
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        let mut j = i;
        while j + 1 < n && est[j + 1] == est[i] {
            j += 1;
        }
        let is_max = est[i - 1] < est[i] && j + 1 < n && est[j + 1] < est[i];
        let excess = est[i] - baseline;
        if is_max && excess > 0.0 && excess >= min_prominence_sigmas * curve.stderr[i] {
            peaks.push(Peak {
                trial_index: i,
                trial_value: curve.trial_values[i],
                estimate: est[i],
                stderr: curve.stderr[i],
                prominence: prominence(est, i, j),
                is_outlier_suspect: false,
                flanking_dissimilarity: None,
                outlier_grid_index: None,
            });
        }
        i = j + 1;
    }
    PeakReport {
        axis: curve.axis,
        g_label: curve.g_label.clone(),
        segment_len: curve.segment_len,
        baseline,
        min_prominence_sigmas,
        peaks,
    }
}

// Plateau occupies start..=end.
fn prominence(est: &[f64], start: usize, end: usize) -> f64 {
    let h = est[start];
    let mut left_min = h;
    for &v in est[..start].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &est[end + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// For every peak, measures the flanking dissimilarity around the two grid
/// points adjacent to the trial point and flags the peak when the smaller of
/// the two is at most `baseline_multiple` times the report baseline.
pub fn annotate_outliers<M: AutoregressiveModel + ?Sized>(
    report: &mut PeakReport,
    model: &M,
    store: &SampleStore,
    grid: &ParameterGrid,
    g: &GSpec,
    n_batches: usize,
    baseline_multiple: f64,
) -> Result<()> {
    if grid.segment_len() != report.segment_len {
        return Err(ScanError::InvalidSettings(format!(
            "report uses L = {} but grid uses L = {}",
            report.segment_len,
            grid.segment_len()
        )));
    }
    let l = grid.segment_len();
    for peak in &mut report.peaks {
        let k = peak.trial_index;
        let mut best: Option<(usize, f64)> = None;
        for idx in [k + l - 1, k + l] {
            if idx == 0 || idx + 1 >= grid.len() {
                continue;
            }
            let f = flanking_dissimilarity(model, store, grid, g, idx, n_batches)?.estimate;
            if best.is_none_or(|(_, b)| f < b) {
                best = Some((idx, f));
            }
        }
        if let Some((idx, f)) = best {
            peak.flanking_dissimilarity = Some(f);
            peak.outlier_grid_index = Some(idx);
            peak.is_outlier_suspect = f <= baseline_multiple * report.baseline;
        }
    }
    Ok(())
}
