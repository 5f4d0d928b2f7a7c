//! Energy along a temperature scan.
//!
//! The energy of a sequence is `-log P(x | T = 1)`, defined up to an additive
//! constant that is never computed. For a single sampling step the family
//! `P(x | T)` is a Boltzmann distribution and the heat capacity `dU/dT`
//! equals `Var(E) / T^2 >= 0`. Sequences drawn token by token are not
//! Boltzmann distributed in the full sequence, so `dU/dT` may be negative.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{derive_seed, AutoregressiveModel, AxisPoint, ModelError, TabularModel, TokenId, TokenSequence};
use crate::scan::{DissimilarityCurve, SampleStore};
use crate::numeric::mean_and_stderr;

#[derive(Debug, Error)]
pub enum ThermoError {
    #[error("invalid temperatures: {0}")]
    InvalidTemperatures(String),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error("model failure at {point}: {source}")]
    Model {
        point: String,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ThermoError> = std::result::Result<T, E>;

fn at(point: &AxisPoint) -> impl FnOnce(ModelError) -> ThermoError + '_ {
    move |source| ThermoError::Model {
        point: point.to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub sequence: TokenSequence,
    pub energy: f64,
}

/// Energy of a continuation: minus its log-probability at temperature 1.
pub fn energy<M: AutoregressiveModel + ?Sized>(model: &M, tokens: &[TokenId]) -> Result<f64> {
    let one = AxisPoint::temperature(1.0);
    Ok(-model.score(&one, tokens).map_err(at(&one))?)
}

pub fn energy_records<M: AutoregressiveModel + ?Sized>(
    model: &M,
    sequences: &[TokenSequence],
) -> Result<Vec<EnergyRecord>> {
    sequences
        .par_iter()
        .map(|s| {
            Ok(EnergyRecord {
                energy: energy(model, &s.tokens)?,
                sequence: s.clone(),
            })
        })
        .collect()
}

/// Mean energy per temperature and, once [`heat_capacity`] has run, its
/// derivative. The heat capacity is undefined at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalCurve {
    pub temperatures: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub me_stderr: Vec<f64>,
    pub heat_capacity: Vec<Option<f64>>,
    pub hc_stderr: Vec<Option<f64>>,
}

impl ThermalCurve {
    /// Builds a curve with no heat capacity yet.
    pub fn new(temperatures: Vec<f64>, mean_energy: Vec<f64>, me_stderr: Vec<f64>) -> Result<Self> {
        let n = temperatures.len();
        if mean_energy.len() != n || me_stderr.len() != n {
            return Err(ThermoError::InvalidSettings("column lengths differ".into()));
        }
        check_temperatures(&temperatures)?;
        Ok(Self {
            temperatures,
            mean_energy,
            me_stderr,
            heat_capacity: vec![None; n],
            hc_stderr: vec![None; n],
        })
    }

    pub fn len(&self) -> usize {
        self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperatures.is_empty()
    }
}

fn check_temperatures(ts: &[f64]) -> Result<()> {
    if let Some(t) = ts.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(ThermoError::InvalidTemperatures(format!(
            "temperatures must be positive and finite, got {t}"
        )));
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ThermoError::InvalidTemperatures("must be strictly increasing".into()));
    }
    Ok(())
}

fn check_batches(n_samples: usize, n_batches: usize) -> Result<()> {
    if n_batches < 2 || n_samples % n_batches != 0 {
        return Err(ThermoError::InvalidSettings(format!(
            "n_batches = {n_batches} must be >= 2 and divide n_samples = {n_samples}"
        )));
    }
    Ok(())
}

/// Samples at every temperature and averages the energy. Temperature `i`
/// uses seed `derive_seed(seed, i)`, the same stream a dissimilarity scan
/// over the same grid uses, so cached samples are shared.
pub fn mean_energy_curve<M: AutoregressiveModel + ?Sized>(
    model: &M,
    temperatures: &[f64],
    n_samples: usize,
    n_tokens: usize,
    seed: u64,
    n_batches: usize,
) -> Result<ThermalCurve> {
    check_temperatures(temperatures)?;
    check_batches(n_samples, n_batches)?;
    let points: Vec<AxisPoint> = temperatures.iter().map(|&t| AxisPoint::temperature(t)).collect();
    let samples = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            model
                .generate(p, n_samples, n_tokens, derive_seed(seed, i as u64))
                .map_err(at(p))
        })
        .collect::<Result<Vec<_>>>()?;
    let seeds = (0..points.len()).map(|i| derive_seed(seed, i as u64)).collect();
    let store = SampleStore::from_samples(points, samples, seed, seeds)
        .map_err(|e| ThermoError::InvalidSettings(e.to_string()))?;
    mean_energy_from_store(model, &store, n_batches)
}

/// Mean energy from existing temperature-scan samples. Each distinct
/// sequence is scored once.
pub fn mean_energy_from_store<M: AutoregressiveModel + ?Sized>(
    model: &M,
    store: &SampleStore,
    n_batches: usize,
) -> Result<ThermalCurve> {
    if let Some(p) = store.points().iter().find(|p| !matches!(p, AxisPoint::Temperature { .. })) {
        return Err(ThermoError::InvalidTemperatures(format!("{p} is not a temperature")));
    }
    check_batches(store.n_samples(), n_batches)?;
    let temperatures: Vec<f64> = store.points().iter().map(AxisPoint::value).collect();
    check_temperatures(&temperatures)?;
    let energies = store
        .unique_sequences()
        .par_iter()
        .map(|s| energy(model, s))
        .collect::<Result<Vec<f64>>>()?;
    let block = store.n_samples() / n_batches;
    let (mut u, mut se) = (Vec::new(), Vec::new());
    for i in 0..store.points().len() {
        let ids = store.sequence_ids(i);
        let batches: Vec<f64> = ids
            .chunks(block)
            .map(|c| c.iter().map(|&id| energies[id as usize]).sum::<f64>() / block as f64)
            .collect();
        let (m, s) = mean_and_stderr(&batches);
        u.push(m);
        se.push(s);
    }
    ThermalCurve::new(temperatures, u, se)
}

/// Central differences `(U[i+1] - U[i-1]) / (T[i+1] - T[i-1])` at interior
/// points; independent errors add in quadrature.
pub fn heat_capacity(curve: &ThermalCurve) -> Result<ThermalCurve> {
    let n = curve.len();
    if n < 3 {
        return Err(ThermoError::InvalidTemperatures(format!(
            "need at least 3 temperatures, got {n}"
        )));
    }
    let mut out = curve.clone();
    out.heat_capacity = vec![None; n];
    out.hc_stderr = vec![None; n];
    for i in 1..n - 1 {
        let dt = curve.temperatures[i + 1] - curve.temperatures[i - 1];
        out.heat_capacity[i] = Some((curve.mean_energy[i + 1] - curve.mean_energy[i - 1]) / dt);
        out.hc_stderr[i] = Some(curve.me_stderr[i + 1].hypot(curve.me_stderr[i - 1]) / dt);
    }
    Ok(out)
}

/// Forward differences `(U[i+1] - U[i]) / (T[i+1] - T[i])` located at the
/// midpoints, where dissimilarity trial points live. Returns
/// `(midpoint, C, stderr)`.
pub fn midpoint_heat_capacity(curve: &ThermalCurve) -> Vec<(f64, f64, f64)> {
    curve
        .temperatures
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let dt = w[1] - w[0];
            (
                0.5 * (w[0] + w[1]),
                (curve.mean_energy[i + 1] - curve.mean_energy[i]) / dt,
                curve.me_stderr[i + 1].hypot(curve.me_stderr[i]) / dt,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRow {
    pub trial_value: f64,
    pub dissimilarity: f64,
    pub heat_capacity: f64,
}

/// Dissimilarity and heat capacity side by side at every trial point of
/// `dissimilarity`. Both must come from the same temperature grid.
pub fn overlay(dissimilarity: &DissimilarityCurve, thermal: &ThermalCurve) -> Result<Vec<OverlayRow>> {
    let mids = midpoint_heat_capacity(thermal);
    let tol = 1e-9 * (thermal.temperatures[thermal.len() - 1] - thermal.temperatures[0]).abs();
    dissimilarity
        .trial_values
        .iter()
        .zip(&dissimilarity.estimates)
        .map(|(&t, &d)| {
            let (_, c, _) = mids
                .iter()
                .find(|(m, _, _)| (m - t).abs() <= tol)
                .ok_or_else(|| {
                    ThermoError::InvalidSettings(format!("trial value {t} is not a grid midpoint"))
                })?;
            Ok(OverlayRow {
                trial_value: t,
                dissimilarity: d,
                heat_capacity: *c,
            })
        })
        .collect()
}

/// Location of the dissimilarity maximum, of the heat-capacity maximum and
/// minimum, on the overlay rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlaySummary {
    pub dissimilarity_peak: f64,
    pub heat_capacity_max: f64,
    pub heat_capacity_min: f64,
    /// Distance from the dissimilarity peak to the nearer heat-capacity extremum.
    pub gap: f64,
}

pub fn overlay_summary(rows: &[OverlayRow]) -> Option<OverlaySummary> {
    let by = |key: fn(&OverlayRow) -> f64, want_max: bool| {
        rows.iter()
            .reduce(|a, b| {
                let better = if want_max { key(b) > key(a) } else { key(b) < key(a) };
                if better { b } else { a }
            })
            .map(|r| r.trial_value)
    };
    let d = by(|r| r.dissimilarity, true)?;
    let cmax = by(|r| r.heat_capacity, true)?;
    let cmin = by(|r| r.heat_capacity, false)?;
    Some(OverlaySummary {
        dissimilarity_peak: d,
        heat_capacity_max: cmax,
        heat_capacity_min: cmin,
        gap: (d - cmax).abs().min((d - cmin).abs()),
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(crate::scan::fmt_f64).unwrap_or_default()
}

/// `temperature,mean_energy,me_stderr,heat_capacity,hc_stderr`; undefined
/// heat capacities are empty fields.
pub fn write_thermal_csv<W: Write>(curve: &ThermalCurve, out: W) -> Result<()> {
    use crate::scan::fmt_f64;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["temperature", "mean_energy", "me_stderr", "heat_capacity", "hc_stderr"])?;
    for i in 0..curve.len() {
        w.write_record([
            fmt_f64(curve.temperatures[i]),
            fmt_f64(curve.mean_energy[i]),
            fmt_f64(curve.me_stderr[i]),
            opt(curve.heat_capacity[i]),
            opt(curve.hc_stderr[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `trial_value,dissimilarity,heat_capacity`.
pub fn write_overlay_csv<W: Write>(rows: &[OverlayRow], out: W) -> Result<()> {
    use crate::scan::fmt_f64;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trial_value", "dissimilarity", "heat_capacity"])?;
    for r in rows {
        w.write_record([fmt_f64(r.trial_value), fmt_f64(r.dissimilarity), fmt_f64(r.heat_capacity)])?;
    }
    w.flush()?;
    Ok(())
}

/// Exact `(U(T), Var(E))` of a tabular model by enumerating every sequence
/// of length `n_tokens`.
pub fn exact_energy_moments(model: &TabularModel, temperature: f64, n_tokens: usize) -> Result<(f64, f64)> {
    let t = AxisPoint::temperature(temperature);
    let one = AxisPoint::temperature(1.0);
    let lp_t = model.exact_log_probs(&t, n_tokens).map_err(at(&t))?;
    let lp_1 = model.exact_log_probs(&one, n_tokens).map_err(at(&one))?;
    let (mut m1, mut m2) = (0.0, 0.0);
    for (a, b) in lp_t.iter().zip(&lp_1) {
        let p = a.exp();
        if p > 0.0 {
            m1 += p * -b;
            m2 += p * b * b;
        }
    }
    Ok((m1, (m2 - m1 * m1).max(0.0)))
}

/// Exact mean energy at every temperature (stderr 0).
pub fn exact_thermal_curve(model: &TabularModel, temperatures: &[f64], n_tokens: usize) -> Result<ThermalCurve> {
    check_temperatures(temperatures)?;
    let u = temperatures
        .par_iter()
        .map(|&t| exact_energy_moments(model, t, n_tokens).map(|m| m.0))
        .collect::<Result<Vec<_>>>()?;
    ThermalCurve::new(temperatures.to_vec(), u, vec![0.0; temperatures.len()])
}
