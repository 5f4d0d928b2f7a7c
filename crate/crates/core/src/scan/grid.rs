use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Result, ScanError};
use crate::models::{render_prompt, AxisKind, AxisPoint};

const SPACING_RTOL: f64 = 1e-9;

/// A uniform one-dimensional grid with segment half-width `L`.
///
/// Trial point `k` (for `k in 0..n_trial()`) lies between grid points
/// `k + L - 1` and `k + L`. Its left segment is grid `k..k+L`, its right
/// segment `k+L..k+2L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterGrid {
    points: Vec<AxisPoint>,
    segment_len: usize,
}

/// Builds `n_points` evenly spaced points from `start` to `stop` inclusive.
///
/// Integer axes need integral endpoints and an integral step. Prompt-slot
/// points render an empty template; use [`ParameterGrid::with_prompt_template`].
pub fn build_grid(
    kind: AxisKind,
    start: f64,
    stop: f64,
    n_points: usize,
    segment_len: usize,
) -> Result<ParameterGrid> {
    if n_points < 2 {
        return Err(ScanError::InvalidGrid("need at least two points".into()));
    }
    if !(start.is_finite() && stop.is_finite()) || stop <= start {
        return Err(ScanError::InvalidGrid(format!(
            "need finite start < stop, got {start}..{stop}"
        )));
    }
    let step = (stop - start) / (n_points - 1) as f64;
    let points = if kind.is_integer() {
        let span = stop - start;
        if start.fract() != 0.0 || stop.fract() != 0.0 {
            return Err(ScanError::InvalidGrid(format!(
                "{kind} endpoints must be integers, got {start}..{stop}"
            )));
        }
        if span as u64 % (n_points as u64 - 1) != 0 {
            return Err(ScanError::InvalidGrid(format!(
                "{n_points} points do not divide {start}..{stop} into integer steps"
            )));
        }
        let (start, step) = (start as i64, step as i64);
        (0..n_points as i64)
            .map(|i| integer_point(kind, start + i * step, ""))
            .collect()
    } else {
        if start <= 0.0 {
            return Err(ScanError::InvalidGrid(format!(
                "temperature grid must start above zero, got {start}"
            )));
        }
        (0..n_points)
            .map(|i| {
                let v = if i + 1 == n_points { stop } else { start + i as f64 * step };
                AxisPoint::temperature(v)
            })
            .collect()
    };
    ParameterGrid::from_points(points, segment_len)
}

fn integer_point(kind: AxisKind, v: i64, template: &str) -> AxisPoint {
    match kind {
        AxisKind::PromptSlot => AxisPoint::prompt_slot(v, template),
        AxisKind::Checkpoint => AxisPoint::checkpoint(v),
        AxisKind::Temperature => AxisPoint::temperature(v as f64),
    }
}

impl ParameterGrid {
    /// Validates kind consistency, strictly increasing uniform spacing and
    /// `points.len() >= 2L + 1`.
    pub fn from_points(points: Vec<AxisPoint>, segment_len: usize) -> Result<Self> {
        if segment_len == 0 {
            return Err(ScanError::InvalidGrid("L must be at least 1".into()));
        }
        if points.len() < 2 * segment_len + 1 {
            return Err(ScanError::InvalidGrid(format!(
                "{} points are too few for L = {segment_len} (need {})",
                points.len(),
                2 * segment_len + 1
            )));
        }
        let kind = points[0].kind();
        if let Some(p) = points.iter().find(|p| p.kind() != kind) {
            return Err(ScanError::InvalidGrid(format!("mixed axis kinds: {kind} and {}", p.kind())));
        }
        if kind == AxisKind::Temperature {
            if let Some(p) = points.iter().find(|p| !(p.value() > 0.0 && p.value().is_finite())) {
                return Err(ScanError::InvalidGrid(format!(
                    "temperatures must be positive and finite, got {}",
                    p.value()
                )));
            }
        }
        let spacing = points[1].value() - points[0].value();
        if !(spacing > 0.0) {
            return Err(ScanError::InvalidGrid("points must be strictly increasing".into()));
        }
        for (i, w) in points.windows(2).enumerate() {
            let d = w[1].value() - w[0].value();
            let ok = if kind.is_integer() {
                d == spacing
            } else {
                (d - spacing).abs() <= SPACING_RTOL * spacing
            };
            if !ok {
                return Err(ScanError::NonUniformGrid {
                    index: i + 1,
                    expected: spacing,
                    found: d,
                });
            }
        }
        Ok(Self {
            points,
            segment_len,
        })
    }

    /// Re-renders every prompt-slot point with `template` (`{T}` is replaced
    /// by the slot). Other axes are unchanged.
    pub fn with_prompt_template(mut self, template: &str) -> Self {
        for p in &mut self.points {
            if let AxisPoint::PromptSlot { slot, prompt } = p {
                *prompt = render_prompt(template, *slot);
            }
        }
        self
    }

    /// Same points with a different segment half-width.
    pub fn with_segment_len(&self, segment_len: usize) -> Result<Self> {
        Self::from_points(self.points.clone(), segment_len)
    }

    pub fn points(&self) -> &[AxisPoint] {
        &self.points
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(AxisPoint::value).collect()
    }

    pub fn kind(&self) -> AxisKind {
        self.points[0].kind()
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.points[1].value() - self.points[0].value()
    }

    /// `|points| - 2L + 1`, always at least 1.
    pub fn n_trial(&self) -> usize {
        self.points.len() + 1 - 2 * self.segment_len
    }

    pub fn trial_value(&self, k: usize) -> f64 {
        let l = self.segment_len;
        0.5 * (self.points[k + l - 1].value() + self.points[k + l].value())
    }

    pub fn trial_values(&self) -> Vec<f64> {
        (0..self.n_trial()).map(|k| self.trial_value(k)).collect()
    }

    /// Index of the trial point at `value`, within a small fraction of the spacing.
    pub fn trial_index(&self, value: f64) -> Option<usize> {
        let tol = 1e-6 * self.spacing();
        (0..self.n_trial()).find(|&k| (self.trial_value(k) - value).abs() <= tol)
    }

    pub fn left_segment(&self, k: usize) -> Range<usize> {
        k..k + self.segment_len
    }

    pub fn right_segment(&self, k: usize) -> Range<usize> {
        k + self.segment_len..k + 2 * self.segment_len
    }

    pub(crate) fn check_trial(&self, k: usize) -> Result<()> {
        if k >= self.n_trial() {
            return Err(ScanError::InvalidSettings(format!(
                "trial index {k} out of range (grid has {} trial points)",
                self.n_trial()
            )));
        }
        Ok(())
    }
}
