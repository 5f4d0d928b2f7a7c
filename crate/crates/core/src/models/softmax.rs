use crate::divergence::FiniteDistribution;
use crate::numeric::log_sum_exp;

use super::{ModelError, Result};

fn check(z: &[f64], temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(ModelError::InvalidTemperature(temperature));
    }
    if z.is_empty() {
        return Err(ModelError::InvalidModel("empty logit vector".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteLogits);
    }
    Ok(())
}

/// `log p_i = z_i/T - log sum_j exp(z_j/T)`.
pub fn log_softmax_temperature(z: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check(z, temperature)?;
    let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
    let lse = log_sum_exp(&scaled);
    Ok(scaled.into_iter().map(|v| v - lse).collect())
}

/// `p_i = exp(z_i/T) / sum_j exp(z_j/T)`, via max-shifted exponentials.
pub fn softmax_temperature(z: &[f64], temperature: f64) -> Result<FiniteDistribution> {
    check(z, temperature)?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = z.iter().map(|v| ((v - max) / temperature).exp()).collect();
    FiniteDistribution::from_weights(weights).map_err(|e| ModelError::InvalidModel(e.to_string()))
}
