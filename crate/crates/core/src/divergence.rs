//! f-divergences, g-dissimilarities and the map between them.
//!
//! A g-dissimilarity scores how well a sample's origin can be told apart
//! between a "left" and a "right" distribution:
//!
//! ```text
//! D_g = 1/2 E_{x~p_left}[ g(P(left|x)) ] + 1/2 E_{x~p_right}[ g(P(right|x)) ]
//! ```
//!
//! Every such quantity equals the f-divergence `D_f[p_left, p_right]` with
//!
//! ```text
//! f(x) = x/2 * g(x/(1+x)) + 1/2 * g(1/(1+x))
//! ```
//!
//! | g                  | g(x)                 | equals           | range      |
//! |--------------------|----------------------|------------------|------------|
//! | [`GSpec::linear`]  | `2x - 1`             | classifier edge  | `[0, 1]`   |
//! | [`GSpec::js`]      | `ln x + ln 2`        | Jensen-Shannon   | `[0, ln 2]`|
//! | [`GSpec::tv`]      | `1 - 2 min(x, 1-x)`  | total variation  | `[0, 1]`   |
//!
//! Posteriors are carried as log-odds `ln p_left(x) - ln p_right(x)`, so
//! sequence probabilities that underflow `f64` never have to be exponentiated.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{log_sigmoid, sigmoid};

/// Tolerance on `sum(p) == 1` accepted by [`FiniteDistribution::new`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivergenceError {
    #[error("support mismatch: {left} vs {right} outcomes")]
    SupportMismatch { left: usize, right: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("f is only defined on x >= 0, got {0}")]
    NegativeArgument(f64),
    #[error("invalid g-function `{label}`: {reason}")]
    InvalidG { label: String, reason: String },
    #[error("unknown g-function `{0}` (expected linear, js or tv)")]
    UnknownG(String),
}

pub type Result<T, E = DivergenceError> = std::result::Result<T, E>;

/// A probability vector over a finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FiniteDistribution {
    probs: Vec<f64>,
}

impl FiniteDistribution {
    /// Validates non-negativity and normalization (within
    /// [`NORMALIZATION_TOLERANCE`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(DivergenceError::InvalidDistribution("empty support".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(DivergenceError::InvalidDistribution(format!(
                "entry {i} is {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(DivergenceError::InvalidDistribution(format!(
                "entries sum to {sum:.17}"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DivergenceError::InvalidDistribution(
                "weights must be finite, non-negative and not all zero".into(),
            ));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(DivergenceError::InvalidDistribution("empty support".into()));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// Equal-weight mixture `1/k * sum_i components[i]`.
    pub fn mixture(components: &[&FiniteDistribution]) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| DivergenceError::InvalidDistribution("empty mixture".into()))?;
        let n = first.len();
        let mut acc = vec![0.0; n];
        for c in components {
            check_support(first, c)?;
            for (a, p) in acc.iter_mut().zip(&c.probs) {
                *a += p;
            }
        }
        let k = components.len() as f64;
        Self::from_weights(acc.into_iter().map(|a| a / k).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl TryFrom<Vec<f64>> for FiniteDistribution {
    type Error = DivergenceError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<FiniteDistribution> for Vec<f64> {
    fn from(value: FiniteDistribution) -> Self {
        value.probs
    }
}

fn check_support(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(DivergenceError::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A convex generator `f` with `f(1) = 0`, together with the two limits needed
/// when one of the compared distributions vanishes: `f(0)` and
/// `f'(inf) = lim f(x)/x`.
#[derive(Clone)]
pub struct FFunction {
    label: String,
    f: RealFn,
    at_zero: f64,
    slope_at_infinity: f64,
}

impl fmt::Debug for FFunction {
    fn fmt(&self, fmt: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt.debug_struct("FFunction")
            .field("label", &self.label)
            .field("at_zero", &self.at_zero)
            .field("slope_at_infinity", &self.slope_at_infinity)
            .finish()
    }
}

impl FFunction {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        at_zero: f64,
        slope_at_infinity: f64,
    ) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
            at_zero,
            slope_at_infinity,
        }
    }

    /// `f(x) = |1 - x| / 2`.
    pub fn total_variation() -> Self {
        Self::new("tv", |x| 0.5 * (1.0 - x).abs(), 0.5, 0.5)
    }

    /// `f(x) = 1/2 [x ln(2x/(1+x)) + ln(2/(1+x))]`.
    pub fn jensen_shannon() -> Self {
        Self::new(
            "js",
            |x| {
                let head = if x == 0.0 { 0.0 } else { x * (2.0 * x / (1.0 + x)).ln() };
                0.5 * (head + (2.0 / (1.0 + x)).ln())
            },
            0.5 * LN_2,
            0.5 * LN_2,
        )
    }

    /// The generator induced by a g-function.
    ///
    /// Both limits equal `g(1)/2`, which holds whenever `x * g(x) -> 0` as
    /// `x -> 0` (true for bounded g and for logarithmic singularities).
    pub fn from_g(g: &GSpec) -> Self {
        let limit = 0.5 * g.eval(1.0);
        let g = g.clone();
        Self {
            label: format!("f[{}]", g.label()),
            f: Arc::new(move |x| f_from_g_unchecked(&g, x)),
            at_zero: limit,
            slope_at_infinity: limit,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x == 0.0 {
            self.at_zero
        } else {
            (self.f)(x)
        }
    }

    pub fn at_zero(&self) -> f64 {
        self.at_zero
    }

    pub fn slope_at_infinity(&self) -> f64 {
        self.slope_at_infinity
    }

    /// `f''(1)` by a central second difference.
    pub fn second_derivative_at_one(&self) -> f64 {
        let h = 1e-4;
        (self.eval(1.0 + h) - 2.0 * self.eval(1.0) + self.eval(1.0 - h)) / (h * h)
    }
}

/// `D_f[p, q] = sum_x q(x) f(p(x)/q(x))`.
///
/// Terms with `q(x) = 0` contribute `p(x) f'(inf)`; terms with `p(x) = 0`
/// contribute `q(x) f(0)`; terms where both vanish contribute nothing.
pub fn f_divergence(
    f: &FFunction,
    p: &FiniteDistribution,
    q: &FiniteDistribution,
) -> Result<f64> {
    check_support(p, q)?;
    let total = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(&pi, &qi)| match (pi > 0.0, qi > 0.0) {
            (_, true) => qi * f.eval(pi / qi),
            (true, false) => pi * f.slope_at_infinity,
            (false, false) => 0.0,
        })
        .sum();
    Ok(total)
}

/// `1/2 sum_x |p(x) - q(x)|`.
pub fn tv_distance(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    check_support(p, q)?;
    Ok(0.5
        * p.probs
            .iter()
            .zip(&q.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>())
}

fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (2.0 * a / (a + b)).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    check_support(p, q)?;
    Ok(0.5 * kl_to_mixture(&p.probs, &q.probs) + 0.5 * kl_to_mixture(&q.probs, &p.probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GKind {
    Linear,
    JensenShannon,
    TotalVariation,
    Custom,
}

#[derive(Clone)]
enum GBase {
    Linear,
    JensenShannon,
    TotalVariation,
    Func(RealFn),
}

/// A g-function acting on the posterior probability of a segment.
///
/// Built-ins are evaluated directly from log-odds, which keeps them finite for
/// posteriors that round to 0 or 1.
#[derive(Clone)]
pub struct GSpec {
    base: GBase,
    shift: f64,
    label: String,
}

impl fmt::Debug for GSpec {
    fn fmt(&self, fmt: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt.debug_struct("GSpec")
            .field("kind", &self.kind())
            .field("label", &self.label)
            .field("shift", &self.shift)
            .finish()
    }
}

impl fmt::Display for GSpec {
    fn fmt(&self, fmt: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt.write_str(&self.label)
    }
}

impl FromStr for GSpec {
    type Err = DivergenceError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(Self::linear()),
            "js" | "jensen_shannon" | "jensen-shannon" => Ok(Self::js()),
            "tv" | "total_variation" | "total-variation" => Ok(Self::tv()),
            other => Err(DivergenceError::UnknownG(other.to_string())),
        }
    }
}

impl GSpec {
    /// `g(x) = 2x - 1`.
    pub fn linear() -> Self {
        Self {
            base: GBase::Linear,
            shift: 0.0,
            label: "linear".into(),
        }
    }

    /// `g(x) = ln x + ln 2`.
    pub fn js() -> Self {
        Self {
            base: GBase::JensenShannon,
            shift: 0.0,
            label: "js".into(),
        }
    }

    /// `g(x) = 1 - 2 min(x, 1 - x)`.
    pub fn tv() -> Self {
        Self {
            base: GBase::TotalVariation,
            shift: 0.0,
            label: "tv".into(),
        }
    }

    pub fn builtins() -> [GSpec; 3] {
        [Self::linear(), Self::js(), Self::tv()]
    }

    /// A user-supplied g-function.
    ///
    /// Rejected unless `g(1/2) = 0` and the induced `f` is convex on a
    /// log-spaced grid over `[1e-4, 1e4]`.
    pub fn custom(
        label: impl Into<String>,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let spec = Self {
            base: GBase::Func(Arc::new(g)),
            shift: 0.0,
            label: label.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let invalid = |reason: String| DivergenceError::InvalidG {
            label: self.label.clone(),
            reason,
        };
        let at_half = self.eval(0.5);
        if !at_half.is_finite() || at_half.abs() > 1e-9 {
            return Err(invalid(format!("g(1/2) = {at_half}, expected 0")));
        }
        const POINTS: usize = 401;
        let xs: Vec<f64> = (0..POINTS)
            .map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / (POINTS - 1) as f64))
            .collect();
        let fs: Vec<f64> = xs.iter().map(|&x| f_from_g_unchecked(self, x)).collect();
        if let Some(i) = fs.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("f({}) is not finite", xs[i])));
        }
        let slopes: Vec<f64> = xs
            .windows(2)
            .zip(fs.windows(2))
            .map(|(x, f)| (f[1] - f[0]) / (x[1] - x[0]))
            .collect();
        for (i, s) in slopes.windows(2).enumerate() {
            if s[1] < s[0] - 1e-9 * (1.0 + s[0].abs()) {
                return Err(invalid(format!(
                    "induced f is not convex near x = {:.4e}",
                    xs[i + 1]
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> GKind {
        match (&self.base, self.shift == 0.0) {
            (GBase::Linear, true) => GKind::Linear,
            (GBase::JensenShannon, true) => GKind::JensenShannon,
            (GBase::TotalVariation, true) => GKind::TotalVariation,
            _ => GKind::Custom,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `g(x)` for a posterior probability `x` in `[0, 1]`.
    pub fn eval(&self, x: f64) -> f64 {
        let base = match &self.base {
            GBase::Linear => 2.0 * x - 1.0,
            GBase::JensenShannon => x.ln() + LN_2,
            GBase::TotalVariation => 1.0 - 2.0 * x.min(1.0 - x),
            GBase::Func(g) => g(x),
        };
        if self.shift == 0.0 {
            base
        } else {
            base + self.shift * (1.0 / x - 2.0)
        }
    }

    /// `g(sigmoid(log_odds))`, evaluated without forming the probability for
    /// the built-ins.
    pub fn eval_log_odds(&self, log_odds: f64) -> f64 {
        let base = match &self.base {
            GBase::Linear => {
                if log_odds.is_infinite() {
                    log_odds.signum()
                } else {
                    (0.5 * log_odds).tanh()
                }
            }
            GBase::JensenShannon => log_sigmoid(log_odds) + LN_2,
            GBase::TotalVariation => 1.0 - 2.0 * sigmoid(-log_odds.abs()),
            GBase::Func(g) => g(sigmoid(log_odds)),
        };
        if self.shift == 0.0 {
            base
        } else {
            // 1/sigmoid(l) - 2 = exp(-l) - 1
            base + self.shift * ((-log_odds).exp() - 1.0)
        }
    }

    /// Central-difference `g'(1/2)`.
    pub fn derivative_at_half(&self) -> f64 {
        let h = 1e-5;
        (self.eval(0.5 + h) - self.eval(0.5 - h)) / (2.0 * h)
    }

    /// Central-difference `g''(1/2)`.
    pub fn second_derivative_at_half(&self) -> f64 {
        let h = 1e-4;
        (self.eval(0.5 + h) - 2.0 * self.eval(0.5) + self.eval(0.5 - h)) / (h * h)
    }
}

/// `f(x) = x/2 g(x/(1+x)) + 1/2 g(1/(1+x))`.
pub fn f_from_g(g: &GSpec, x: f64) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(DivergenceError::NegativeArgument(x));
    }
    Ok(f_from_g_unchecked(g, x))
}

fn f_from_g_unchecked(g: &GSpec, x: f64) -> f64 {
    if x == 0.0 {
        return 0.5 * g.eval(1.0);
    }
    // x/(1+x) = sigmoid(ln x), so both terms reuse the log-odds path.
    let l = x.ln();
    0.5 * x * g.eval_log_odds(l) + 0.5 * g.eval_log_odds(-l)
}

/// `g~(x) = g(x) + c (1/x - 2)`, which induces the same dissimilarity on
/// distributions with common support.
pub fn g_shift(g: &GSpec, c: f64) -> GSpec {
    if c == 0.0 {
        return g.clone();
    }
    GSpec {
        base: g.base.clone(),
        shift: g.shift + c,
        label: format!("{}{:+}(1/x-2)", g.label, c),
    }
}

/// Posterior `P(left | x)` stored as log-odds `ln P_left(x) - ln P_right(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPosterior {
    log_odds: f64,
}

impl SegmentPosterior {
    pub fn from_log_odds(log_odds: f64) -> Self {
        Self { log_odds }
    }

    pub fn from_log_probs(log_p_left: f64, log_p_right: f64) -> Self {
        let log_odds = if log_p_left == log_p_right {
            // covers the (-inf, -inf) case
            0.0
        } else {
            log_p_left - log_p_right
        };
        Self { log_odds }
    }

    pub fn log_odds(&self) -> f64 {
        self.log_odds
    }

    pub fn p_left(&self) -> f64 {
        sigmoid(self.log_odds)
    }

    pub fn p_right(&self) -> f64 {
        sigmoid(-self.log_odds)
    }

    /// The same sample seen from the other side.
    pub fn swapped(&self) -> Self {
        Self {
            log_odds: -self.log_odds,
        }
    }

    /// `(g(P(left|x)), g(P(right|x)))`.
    pub fn g_pair(&self, g: &GSpec) -> (f64, f64) {
        (g.eval_log_odds(self.log_odds), g.eval_log_odds(-self.log_odds))
    }
}

/// Exact `D_g` between two finite distributions by summation over the support.
pub fn exact_g_dissimilarity(
    g: &GSpec,
    p_left: &FiniteDistribution,
    p_right: &FiniteDistribution,
) -> Result<f64> {
    check_support(p_left, p_right)?;
    let mut left = 0.0;
    let mut right = 0.0;
    for (&a, &b) in p_left.probs.iter().zip(&p_right.probs) {
        if a == 0.0 && b == 0.0 {
            continue;
        }
        let posterior = SegmentPosterior::from_log_probs(a.ln(), b.ln());
        let (gl, gr) = posterior.g_pair(g);
        if a > 0.0 {
            left += a * gl;
        }
        if b > 0.0 {
            right += b * gr;
        }
    }
    Ok(0.5 * (left + right))
}

/// Shift constant `c = g'(1/2) / 4` that makes `g~'(1/2) = 0`.
pub fn fisher_shift_constant(g: &GSpec) -> f64 {
    0.25 * g.derivative_at_half()
}

/// Coefficient `k` in `D = k F dT^2 + O(dT^3)` via the generator: `k = f''(1)/2`.
pub fn fisher_coefficient_via_f(g: &GSpec) -> f64 {
    0.5 * FFunction::from_g(g).second_derivative_at_one()
}

/// The same coefficient via the g-function: `k = g~''(1/2)/32` where `g~` is
/// `g` shifted so its slope vanishes at one half.
pub fn fisher_coefficient_via_g(g: &GSpec) -> f64 {
    let shifted = g_shift(g, fisher_shift_constant(g));
    shifted.second_derivative_at_half() / 32.0
}
