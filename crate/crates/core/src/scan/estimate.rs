use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stage1_generate, ParameterGrid, Result, SampleStore, ScanError};
use crate::divergence::{GSpec, SegmentPosterior};
use crate::models::{AutoregressiveModel, AxisKind, TabularModel};
use crate::numeric::{log_sum_exp, mean_and_stderr};

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Dissimilarity at every trial point of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissimilarityCurve {
    pub axis: AxisKind,
    pub g_label: String,
    #[serde(rename = "L")]
    pub segment_len: usize,
    /// Zero for exact (non-sampled) curves.
    pub n_batches: usize,
    pub trial_values: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl DissimilarityCurve {
    pub fn len(&self) -> usize {
        self.trial_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trial_values.is_empty()
    }

    /// Index of the largest estimate (first on ties).
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, &e) in self.estimates.iter().enumerate() {
            if best.is_none_or(|b| e > self.estimates[b]) {
                best = Some(i);
            }
        }
        best
    }
}

/// Posterior of the left segment given a sequence's log-probabilities under
/// the `L` left points followed by the `L` right points.
pub fn segment_posterior(log_p_under: &[f64]) -> Result<SegmentPosterior> {
    if log_p_under.is_empty() || log_p_under.len() % 2 != 0 {
        return Err(ScanError::InvalidSettings(format!(
            "need an even, non-zero number of log-probabilities, got {}",
            log_p_under.len()
        )));
    }
    if let Some(x) = log_p_under.iter().find(|x| !x.is_finite()) {
        return Err(ScanError::InvalidSettings(format!("non-finite log-probability {x}")));
    }
    let (left, right) = log_p_under.split_at(log_p_under.len() / 2);
    Ok(posterior(left, right))
}

// Equal segment sizes: the -log L terms cancel in the log-odds.
fn posterior(left: &[f64], right: &[f64]) -> SegmentPosterior {
    SegmentPosterior::from_log_probs(log_sum_exp(left), log_sum_exp(right))
}

fn check_batches(store: &SampleStore, n_batches: usize) -> Result<()> {
    if n_batches < 2 {
        return Err(ScanError::InvalidSettings(format!(
            "need at least 2 batches for a standard error, got {n_batches}"
        )));
    }
    if store.n_samples() % n_batches != 0 {
        return Err(ScanError::InvalidSettings(format!(
            "{n_batches} batches do not divide {} samples per point",
            store.n_samples()
        )));
    }
    Ok(())
}

/// Unbiased estimate of `D_g` between the mixtures over `left` and `right`
/// grid indices (equal lengths), with a batch standard error.
fn segments_estimate<M: AutoregressiveModel + ?Sized>(
    model: &M,
    store: &SampleStore,
    left: &[usize],
    right: &[usize],
    g: &GSpec,
    n_batches: usize,
) -> Result<Estimate> {
    debug_assert_eq!(left.len(), right.len());
    let window: Vec<usize> = left.iter().chain(right).copied().collect();
    let uids = store.uids_at(window.iter().copied());
    for &p in &window {
        store.ensure_scores(model, p, &uids)?;
    }
    let pairs: HashMap<u32, (f64, f64)> = store.with_scores(&window, |maps| {
        let half = left.len();
        let mut buf = vec![0.0; window.len()];
        uids.iter()
            .map(|&u| {
                for (b, m) in buf.iter_mut().zip(maps) {
                    *b = m[&u];
                }
                (u, posterior(&buf[..half], &buf[half..]).g_pair(g))
            })
            .collect()
    });
    let block = store.n_samples() / n_batches;
    let per_segment = |points: &[usize], b: usize, pick: fn(&(f64, f64)) -> f64| -> f64 {
        let total: f64 = points
            .iter()
            .map(|&p| {
                store.sequence_ids(p)[b * block..(b + 1) * block]
                    .iter()
                    .map(|u| pick(&pairs[u]))
                    .sum::<f64>()
            })
            .sum();
        total / (points.len() * block) as f64
    };
    let batches: Vec<f64> = (0..n_batches)
        .map(|b| 0.5 * (per_segment(left, b, |p| p.0) + per_segment(right, b, |p| p.1)))
        .collect();
    let (estimate, stderr) = mean_and_stderr(&batches);
    Ok(Estimate { estimate, stderr })
}

/// Stage 2 at trial point `trial_index`: scores every sample of the `2L`
/// neighbouring sets under all `2L` points (cache first) and averages `g` of
/// the segment posterior. Batches are contiguous blocks in generation order.
pub fn stage2_estimate<M: AutoregressiveModel + ?Sized>(
    model: &M,
    store: &SampleStore,
    grid: &ParameterGrid,
    g: &GSpec,
    trial_index: usize,
    n_batches: usize,
) -> Result<Estimate> {
    store.check_grid(grid)?;
    grid.check_trial(trial_index)?;
    check_batches(store, n_batches)?;
    let left: Vec<usize> = grid.left_segment(trial_index).collect();
    let right: Vec<usize> = grid.right_segment(trial_index).collect();
    segments_estimate(model, store, &left, &right, g, n_batches)
}

/// Stage 2 at every trial point. Scoring is parallel within each grid point;
/// the per-trial arithmetic is parallel across trial points.
pub fn estimate_curve<M: AutoregressiveModel + ?Sized>(
    model: &M,
    store: &SampleStore,
    grid: &ParameterGrid,
    g: &GSpec,
    n_batches: usize,
) -> Result<DissimilarityCurve> {
    store.check_grid(grid)?;
    check_batches(store, n_batches)?;
    let l = grid.segment_len();
    let n = grid.len();
    for p in 0..n {
        // Point p shares a window with every q such that some trial window
        // k..k+2L contains both.
        let k_lo = p.saturating_sub(2 * l - 1);
        let k_hi = p.min(grid.n_trial() - 1);
        let lo = k_lo;
        let hi = (k_hi + 2 * l).min(n);
        let uids = store.uids_at(lo..hi);
        store.ensure_scores(model, p, &uids)?;
    }
    let estimates = (0..grid.n_trial())
        .into_par_iter()
        .map(|k| stage2_estimate(model, store, grid, g, k, n_batches))
        .collect::<Result<Vec<_>>>()?;
    Ok(DissimilarityCurve {
        axis: grid.kind(),
        g_label: g.label().to_string(),
        segment_len: l,
        n_batches,
        trial_values: grid.trial_values(),
        estimates: estimates.iter().map(|e| e.estimate).collect(),
        stderr: estimates.iter().map(|e| e.stderr).collect(),
    })
}

/// Stage 1 followed by stage 2 at every trial point. Deterministic for a
/// fixed seed.
pub fn run_scan<M: AutoregressiveModel + ?Sized>(
    model: &M,
    grid: &ParameterGrid,
    g: &GSpec,
    n_samples: usize,
    n_tokens: usize,
    seed: u64,
    n_batches: usize,
) -> Result<DissimilarityCurve> {
    if n_samples % n_batches.max(1) != 0 || n_batches < 2 {
        return Err(ScanError::InvalidSettings(format!(
            "n_batches = {n_batches} must be >= 2 and divide n_samples = {n_samples}"
        )));
    }
    let store = stage1_generate(model, grid, n_samples, n_tokens, seed)?;
    estimate_curve(model, &store, grid, g, n_batches)
}

/// Dissimilarity between the points directly left and right of grid point
/// `grid_index`, skipping the point itself. A small value next to a large
/// adjacent trial estimate marks `grid_index` as an outlier.
pub fn flanking_dissimilarity<M: AutoregressiveModel + ?Sized>(
    model: &M,
    store: &SampleStore,
    grid: &ParameterGrid,
    g: &GSpec,
    grid_index: usize,
    n_batches: usize,
) -> Result<Estimate> {
    store.check_grid(grid)?;
    if grid_index == 0 || grid_index + 1 >= grid.len() {
        return Err(ScanError::InvalidSettings(format!(
            "grid index {grid_index} has no neighbour on both sides"
        )));
    }
    check_batches(store, n_batches)?;
    segments_estimate(model, store, &[grid_index - 1], &[grid_index + 1], g, n_batches)
}

/// Stage 2 with every sequence enumerated and weighted by its exact mixture
/// probability in place of sampling. Uses the same posterior arithmetic as
/// the sampled estimator.
pub fn exact_trial_estimate(
    model: &TabularModel,
    grid: &ParameterGrid,
    g: &GSpec,
    trial_index: usize,
    n_tokens: usize,
) -> Result<f64> {
    grid.check_trial(trial_index)?;
    let window: Vec<usize> = grid.left_segment(trial_index).chain(grid.right_segment(trial_index)).collect();
    let lps = window
        .iter()
        .map(|&p| {
            let pt = &grid.points()[p];
            model.exact_log_probs(pt, n_tokens).map_err(ScanError::at(pt))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(exact_from_log_probs(&lps, g))
}

/// `lps[j][s]`: log-probability of sequence `s` under window point `j`; the
/// first half of the window is the left segment.
fn exact_from_log_probs(lps: &[Vec<f64>], g: &GSpec) -> f64 {
    let half = lps.len() / 2;
    let l = half as f64;
    let mut buf = vec![0.0; lps.len()];
    let (mut j_left, mut j_right) = (0.0, 0.0);
    for s in 0..lps[0].len() {
        for (b, lp) in buf.iter_mut().zip(lps) {
            *b = lp[s];
        }
        let w_left: f64 = buf[..half].iter().map(|x| x.exp()).sum::<f64>() / l;
        let w_right: f64 = buf[half..].iter().map(|x| x.exp()).sum::<f64>() / l;
        if w_left == 0.0 && w_right == 0.0 {
            continue;
        }
        let (gl, gr) = posterior(&buf[..half], &buf[half..]).g_pair(g);
        if w_left > 0.0 {
            j_left += w_left * gl;
        }
        if w_right > 0.0 {
            j_right += w_right * gr;
        }
    }
    0.5 * (j_left + j_right)
}

/// Exact curve of a tabular model (stderr 0, `n_batches` 0).
pub fn exact_curve(
    model: &TabularModel,
    grid: &ParameterGrid,
    g: &GSpec,
    n_tokens: usize,
) -> Result<DissimilarityCurve> {
    let lps = grid
        .points()
        .par_iter()
        .map(|pt| model.exact_log_probs(pt, n_tokens).map_err(ScanError::at(pt)))
        .collect::<Result<Vec<_>>>()?;
    let estimates: Vec<f64> = (0..grid.n_trial())
        .into_par_iter()
        .map(|k| {
            let window: Vec<Vec<f64>> = grid
                .left_segment(k)
                .chain(grid.right_segment(k))
                .map(|p| lps[p].clone())
                .collect();
            exact_from_log_probs(&window, g)
        })
        .collect();
    Ok(DissimilarityCurve {
        axis: grid.kind(),
        g_label: g.label().to_string(),
        segment_len: grid.segment_len(),
        n_batches: 0,
        trial_values: grid.trial_values(),
        stderr: vec![0.0; estimates.len()],
        estimates,
    })
}
