//! Enumeration oracle independent of the library: sequence probabilities are
//! products of hand-rolled softmax steps, dissimilarities use the naive
//! linear-space formula.
#![allow(dead_code)]

use phasescan::models::{LogitPiece, LogitTable, TabularModel};

pub type LogitFn = fn(&[u32], f64) -> Vec<f64>;

pub fn softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - m) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Probability of every length-`n` sequence (first token most significant).
pub fn sequence_probs(v: usize, n: usize, step: impl Fn(&[u32]) -> Vec<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.pow(n as u32));
    let mut seq = vec![0u32; n];
    for idx in 0..v.pow(n as u32) {
        let mut r = idx;
        for i in (0..n).rev() {
            seq[i] = (r % v) as u32;
            r /= v;
        }
        let mut p = 1.0;
        for i in 0..n {
            p *= step(&seq[..i])[seq[i] as usize];
        }
        out.push(p);
    }
    out
}

pub fn g_value(name: &str, x: f64) -> f64 {
    match name {
        "linear" => 2.0 * x - 1.0,
        "js" => x.ln() + 2f64.ln(),
        "tv" => 1.0 - 2.0 * x.min(1.0 - x),
        _ => unreachable!(),
    }
}

pub fn dissimilarity(name: &str, p: &[f64], q: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            d += 0.5 * a * g_value(name, a / (a + b));
        }
        if b > 0.0 {
            d += 0.5 * b * g_value(name, b / (a + b));
        }
    }
    d
}

pub fn mixture(parts: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; parts[0].len()];
    for p in parts {
        for (a, b) in m.iter_mut().zip(p) {
            *a += b / parts.len() as f64;
        }
    }
    m
}

/// A model whose logits at axis value `t` are `f(prefix, t)`, one constant
/// piece per grid value.
pub fn model_on_grid(v: usize, n: usize, values: &[f64], f: LogitFn) -> TabularModel {
    let pieces = values
        .iter()
        .map(|&t| LogitPiece::constant(t, LogitTable::from_fn(v, n, |p| f(p, t))))
        .collect();
    TabularModel::new(v, n, pieces).unwrap()
}

/// Oracle distributions at each grid value for `model_on_grid`.
pub fn grid_probs(v: usize, n: usize, values: &[f64], f: LogitFn) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|&t| sequence_probs(v, n, |p| softmax(&f(p, t), 1.0)))
        .collect()
}

/// Oracle dissimilarity at trial `k` with half-width `l`.
pub fn trial_oracle(name: &str, probs: &[Vec<f64>], k: usize, l: usize) -> f64 {
    dissimilarity(name, &mixture(&probs[k..k + l]), &mixture(&probs[k + l..k + 2 * l]))
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
