use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::divergence::FiniteDistribution;

use super::softmax::log_softmax_temperature;
use super::{AutoregressiveModel, AxisPoint, ModelError, Result, TokenId, TokenSequence};

/// Largest `V^N` that [`TabularModel::exact_distribution`] will enumerate.
pub const MAX_EXACT_STATES: usize = 1_000_000;

/// Logits for every context of a tabular model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogitTable {
    /// One row shared by every context (tokens are i.i.d.).
    Broadcast(Vec<f64>),
    /// One row per context prefix, in [`TabularModel::context_index`] order.
    Rows(Vec<Vec<f64>>),
}

impl LogitTable {
    /// Builds a full table by evaluating `row` on every prefix shorter than
    /// `max_len`, in index order.
    pub fn from_fn(
        vocab_size: usize,
        max_len: usize,
        mut row: impl FnMut(&[TokenId]) -> Vec<f64>,
    ) -> Self {
        let mut rows = Vec::with_capacity(context_count(vocab_size, max_len));
        for len in 0..max_len {
            let count = vocab_size.pow(len as u32);
            for idx in 0..count {
                rows.push(row(&decode(idx, len, vocab_size)));
            }
        }
        LogitTable::Rows(rows)
    }

    fn row(&self, context: usize) -> &[f64] {
        match self {
            LogitTable::Broadcast(r) => r,
            LogitTable::Rows(rows) => &rows[context],
        }
    }

    fn validate(&self, vocab_size: usize, max_len: usize) -> Result<()> {
        let rows: Vec<&Vec<f64>> = match self {
            LogitTable::Broadcast(r) => vec![r],
            LogitTable::Rows(rows) => {
                let expected = context_count(vocab_size, max_len);
                if rows.len() != expected {
                    return Err(ModelError::InvalidModel(format!(
                        "expected {expected} logit rows, found {}",
                        rows.len()
                    )));
                }
                rows.iter().collect()
            }
        };
        for r in rows {
            if r.len() != vocab_size {
                return Err(ModelError::InvalidModel(format!(
                    "logit row of length {} for vocabulary of size {vocab_size}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteLogits);
            }
        }
        Ok(())
    }
}

/// Logits active from axis value `start` on: `logits + value * slope`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitPiece {
    pub start: f64,
    pub logits: LogitTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<LogitTable>,
}

impl LogitPiece {
    pub fn constant(start: f64, logits: LogitTable) -> Self {
        Self {
            start,
            logits,
            slope: None,
        }
    }

    pub fn linear(start: f64, logits: LogitTable, slope: LogitTable) -> Self {
        Self {
            start,
            logits,
            slope: Some(slope),
        }
    }
}

#[derive(Deserialize)]
struct RawTabular {
    vocab_size: usize,
    max_len: usize,
    #[serde(default)]
    temperature_reference: f64,
    pieces: Vec<LogitPiece>,
}

/// A small autoregressive model given by explicit logit tables.
///
/// The axis value selects a [`LogitPiece`] (the last one whose `start` does not
/// exceed it) for prompt-slot and checkpoint points. Temperature points use the
/// logits at `temperature_reference` and rescale them by the temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTabular")]
pub struct TabularModel {
    vocab_size: usize,
    max_len: usize,
    temperature_reference: f64,
    pieces: Vec<LogitPiece>,
}

impl TryFrom<RawTabular> for TabularModel {
    type Error = ModelError;

    fn try_from(raw: RawTabular) -> Result<Self> {
        TabularModel::new(raw.vocab_size, raw.max_len, raw.pieces)
            .map(|m| m.with_temperature_reference(raw.temperature_reference))
    }
}

fn context_count(vocab_size: usize, max_len: usize) -> usize {
    (0..max_len).map(|k| vocab_size.pow(k as u32)).sum()
}

fn decode(mut idx: usize, len: usize, vocab_size: usize) -> Vec<TokenId> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = (idx % vocab_size) as TokenId;
        idx /= vocab_size;
    }
    out
}

struct StepSampler {
    log_probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl StepSampler {
    fn new(log_probs: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cdf = log_probs
            .iter()
            .map(|lp| {
                acc += lp.exp();
                acc
            })
            .collect();
        Self { log_probs, cdf }
    }

    fn draw(&self, u: f64) -> usize {
        let u = u * self.cdf[self.cdf.len() - 1];
        match self.cdf.iter().position(|&c| c > u) {
            Some(i) => i,
            // rounding at the top end: take the last token with mass
            None => self
                .log_probs
                .iter()
                .rposition(|lp| *lp > f64::NEG_INFINITY)
                .unwrap_or(0),
        }
    }
}

impl TabularModel {
    pub fn new(vocab_size: usize, max_len: usize, mut pieces: Vec<LogitPiece>) -> Result<Self> {
        if vocab_size == 0 || max_len == 0 {
            return Err(ModelError::InvalidModel(
                "vocab_size and max_len must be positive".into(),
            ));
        }
        if pieces.is_empty() {
            return Err(ModelError::InvalidModel("no logit pieces".into()));
        }
        if pieces.iter().any(|p| !p.start.is_finite()) {
            return Err(ModelError::InvalidModel("piece start must be finite".into()));
        }
        for p in &pieces {
            p.logits.validate(vocab_size, max_len)?;
            if let Some(s) = &p.slope {
                s.validate(vocab_size, max_len)?;
            }
        }
        pieces.sort_by(|a, b| a.start.total_cmp(&b.start));
        Ok(Self {
            vocab_size,
            max_len,
            temperature_reference: 0.0,
            pieces,
        })
    }

    /// Context-independent logits that switch at the given axis values.
    pub fn iid(vocab_size: usize, max_len: usize, pieces: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        Self::new(
            vocab_size,
            max_len,
            pieces
                .into_iter()
                .map(|(start, row)| LogitPiece::constant(start, LogitTable::Broadcast(row)))
                .collect(),
        )
    }

    pub fn with_temperature_reference(mut self, value: f64) -> Self {
        self.temperature_reference = value;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| ModelError::InvalidModel(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Row index of a context prefix shorter than `max_len`.
    pub fn context_index(&self, prefix: &[TokenId]) -> usize {
        let offset = context_count(self.vocab_size, prefix.len());
        offset
            + prefix
                .iter()
                .fold(0usize, |acc, &t| acc * self.vocab_size + t as usize)
    }

    /// Tokens of the `index`-th sequence of length `len` in lexicographic order.
    pub fn sequence_at(&self, index: usize, len: usize) -> Vec<TokenId> {
        decode(index, len, self.vocab_size)
    }

    /// Index of `tokens` among sequences of the same length.
    pub fn sequence_index(&self, tokens: &[TokenId]) -> usize {
        tokens
            .iter()
            .fold(0usize, |acc, &t| acc * self.vocab_size + t as usize)
    }

    fn piece(&self, value: f64) -> &LogitPiece {
        self.pieces
            .iter()
            .rev()
            .find(|p| p.start <= value)
            .unwrap_or(&self.pieces[0])
    }

    /// Raw logits of the next token after `prefix` at `point`.
    pub fn logits(&self, prefix: &[TokenId], point: &AxisPoint) -> Result<Vec<f64>> {
        if prefix.len() >= self.max_len {
            return Err(ModelError::SequenceTooLong {
                requested: prefix.len() + 1,
                max_len: self.max_len,
            });
        }
        self.check_tokens(prefix)?;
        let value = match point {
            AxisPoint::Temperature { .. } => self.temperature_reference,
            other => other.value(),
        };
        let piece = self.piece(value);
        let ctx = self.context_index(prefix);
        let mut z = piece.logits.row(ctx).to_vec();
        if let Some(slope) = &piece.slope {
            for (zi, si) in z.iter_mut().zip(slope.row(ctx)) {
                *zi += value * si;
            }
        }
        Ok(z)
    }

    /// Log-probabilities of the next token after `prefix` at `point`.
    pub fn step_log_probs(&self, prefix: &[TokenId], point: &AxisPoint) -> Result<Vec<f64>> {
        let z = self.logits(prefix, point)?;
        log_softmax_temperature(&z, point.sampling_temperature())
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&token) => Err(ModelError::TokenOutOfVocab {
                token,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn check_len(&self, n_tokens: usize) -> Result<()> {
        if n_tokens == 0 {
            return Err(ModelError::InvalidRequest("n_tokens must be >= 1".into()));
        }
        if n_tokens > self.max_len {
            return Err(ModelError::SequenceTooLong {
                requested: n_tokens,
                max_len: self.max_len,
            });
        }
        Ok(())
    }

    /// Log-probability of every length-`n_tokens` sequence, indexed by
    /// [`TabularModel::sequence_index`].
    pub fn exact_log_probs(&self, point: &AxisPoint, n_tokens: usize) -> Result<Vec<f64>> {
        self.check_len(n_tokens)?;
        let states = (self.vocab_size as f64).powi(n_tokens as i32);
        if states > MAX_EXACT_STATES as f64 {
            return Err(ModelError::StateSpaceTooLarge {
                states,
                limit: MAX_EXACT_STATES,
            });
        }
        let v = self.vocab_size;
        let mut current = vec![0.0];
        for depth in 0..n_tokens {
            let mut next = Vec::with_capacity(current.len() * v);
            for (idx, lp) in current.iter().enumerate() {
                let prefix = decode(idx, depth, v);
                let step = self.step_log_probs(&prefix, point)?;
                next.extend(step.iter().map(|s| lp + s));
            }
            current = next;
        }
        Ok(current)
    }

    /// Distribution over all `V^N` sequences of length `max_len`.
    pub fn exact_distribution(&self, point: &AxisPoint) -> Result<FiniteDistribution> {
        self.exact_distribution_len(point, self.max_len)
    }

    /// Distribution over all sequences of length `n_tokens`.
    pub fn exact_distribution_len(
        &self,
        point: &AxisPoint,
        n_tokens: usize,
    ) -> Result<FiniteDistribution> {
        let probs: Vec<f64> = self
            .exact_log_probs(point, n_tokens)?
            .into_iter()
            .map(f64::exp)
            .collect();
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(ModelError::InvalidModel(format!(
                "enumerated probabilities sum to {sum}"
            )));
        }
        FiniteDistribution::from_weights(probs).map_err(|e| ModelError::InvalidModel(e.to_string()))
    }
}

impl AutoregressiveModel for TabularModel {
    fn generate(
        &self,
        point: &AxisPoint,
        n_samples: usize,
        n_tokens: usize,
        seed: u64,
    ) -> Result<Vec<TokenSequence>> {
        if n_samples == 0 {
            return Err(ModelError::InvalidRequest("n_samples must be >= 1".into()));
        }
        self.check_len(n_tokens)?;
        let temperature = point.sampling_temperature();
        if !(temperature > 0.0) {
            return Err(ModelError::InvalidTemperature(temperature));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samplers: HashMap<usize, StepSampler> = HashMap::new();
        let mut out = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let mut tokens = Vec::with_capacity(n_tokens);
            let mut logprobs = Vec::with_capacity(n_tokens);
            for _ in 0..n_tokens {
                let ctx = self.context_index(&tokens);
                let sampler = match samplers.entry(ctx) {
                    std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(StepSampler::new(self.step_log_probs(&tokens, point)?))
                    }
                };
                let t = sampler.draw(rng.random::<f64>());
                logprobs.push(sampler.log_probs[t]);
                tokens.push(t as TokenId);
            }
            out.push(TokenSequence {
                tokens,
                per_token_logprob: logprobs,
            });
        }
        Ok(out)
    }

    fn score(&self, point: &AxisPoint, tokens: &[TokenId]) -> Result<f64> {
        if tokens.is_empty() {
            return Err(ModelError::InvalidRequest("cannot score an empty sequence".into()));
        }
        self.check_len(tokens.len())?;
        self.check_tokens(tokens)?;
        let mut total = 0.0;
        for i in 0..tokens.len() {
            total += self.step_log_probs(&tokens[..i], point)?[tokens[i] as usize];
        }
        Ok(total)
    }

    fn argmax_sample(&self, point: &AxisPoint, n_tokens: usize) -> Result<TokenSequence> {
        self.check_len(n_tokens)?;
        let temperature = point.sampling_temperature();
        let mut tokens = Vec::with_capacity(n_tokens);
        let mut logprobs = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let z = self.logits(&tokens, point)?;
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let best = z.iter().position(|&v| v == max).unwrap_or(0);
            let lp = if temperature > 0.0 {
                log_softmax_temperature(&z, temperature)?[best]
            } else {
                // T -> 0: mass splits evenly over tied maxima
                -(z.iter().filter(|&&v| v == max).count() as f64).ln()
            };
            tokens.push(best as TokenId);
            logprobs.push(lp);
        }
        Ok(TokenSequence {
            tokens,
            per_token_logprob: logprobs,
        })
    }
}
