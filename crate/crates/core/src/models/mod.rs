//! Autoregressive models that can both sample and score token sequences.
//!
//! Every model is queried at an [`AxisPoint`], the value of the scanned control
//! parameter. Probabilities are always conditional on the prompt: only the
//! generated continuation is scored.

mod cache;
mod remote;
mod softmax;
mod tabular;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::DiskCache;
pub use remote::{BridgeInfo, ModelEndpoint, RemoteModel};
pub use softmax::{log_softmax_temperature, softmax_temperature};
pub use tabular::{LogitPiece, LogitTable, TabularModel, MAX_EXACT_STATES};

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("temperature must be positive, got {0} (use argmax_sample for T = 0)")]
    InvalidTemperature(f64),
    #[error("logits contain a non-finite entry")]
    NonFiniteLogits,
    #[error("token {token} is outside the vocabulary of size {vocab_size}")]
    TokenOutOfVocab { token: TokenId, vocab_size: usize },
    #[error("sequence of {requested} tokens exceeds the model's maximum length {max_len}")]
    SequenceTooLong { requested: usize, max_len: usize },
    #[error("state space of {states} sequences exceeds the exact-enumeration limit {limit}")]
    StateSpaceTooLarge { states: f64, limit: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unknown checkpoint revision `{0}`")]
    UnknownRevision(String),
    #[error("tokenizer fingerprint changed from {expected} to {found} after loading `{revision}`")]
    FingerprintMismatch {
        expected: String,
        found: String,
        revision: String,
    },
    #[error("remote call {endpoint} failed{}: {message}", status.map(|s| format!(" with status {s}")).unwrap_or_default())]
    Remote {
        endpoint: String,
        status: Option<u16>,
        message: String,
    },
    #[error("cache I/O: {0}")]
    Cache(#[from] std::io::Error),
}

impl ModelError {
    /// Transport failures and server-side errors may succeed on retry.
    pub fn is_retriable(&self) -> bool {
        match self {
            ModelError::Remote { status, .. } => match status {
                None => true,
                Some(s) => *s >= 500 || *s == 429,
            },
            _ => false,
        }
    }
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// A generated continuation with the log-probability (nats) of each token
/// under the distribution it was sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    #[serde(rename = "logprobs")]
    pub per_token_logprob: Vec<f64>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, per_token_logprob: Vec<f64>) -> Result<Self> {
        if tokens.len() != per_token_logprob.len() {
            return Err(ModelError::InvalidRequest(format!(
                "{} tokens but {} log-probabilities",
                tokens.len(),
                per_token_logprob.len()
            )));
        }
        if let Some(lp) = per_token_logprob.iter().find(|lp| !(**lp <= 1e-9)) {
            return Err(ModelError::InvalidRequest(format!(
                "log-probability {lp} is not <= 0"
            )));
        }
        Ok(Self {
            tokens,
            per_token_logprob,
        })
    }

    pub fn total_logprob(&self) -> f64 {
        self.per_token_logprob.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKind {
    PromptSlot,
    Temperature,
    Checkpoint,
}

impl AxisKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AxisKind::PromptSlot => "prompt_slot",
            AxisKind::Temperature => "temperature",
            AxisKind::Checkpoint => "checkpoint",
        }
    }

    /// Prompt slots and checkpoints take integer values.
    pub fn is_integer(&self) -> bool {
        !matches!(self, AxisKind::Temperature)
    }
}

impl fmt::Display for AxisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AxisKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prompt_slot" | "prompt" => Ok(AxisKind::PromptSlot),
            "temperature" => Ok(AxisKind::Temperature),
            "checkpoint" | "epoch" => Ok(AxisKind::Checkpoint),
            other => Err(format!("unknown axis kind `{other}`")),
        }
    }
}

/// One value of the control parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisPoint {
    /// An integer substituted into a prompt template.
    PromptSlot { slot: i64, prompt: String },
    /// Sampling temperature. Zero is only meaningful for greedy decoding.
    Temperature { value: f64 },
    /// Training checkpoint (epoch id).
    Checkpoint { epoch: i64 },
}

impl AxisPoint {
    pub fn prompt_slot(slot: i64, template: &str) -> Self {
        AxisPoint::PromptSlot {
            slot,
            prompt: render_prompt(template, slot),
        }
    }

    pub fn temperature(value: f64) -> Self {
        AxisPoint::Temperature { value }
    }

    pub fn checkpoint(epoch: i64) -> Self {
        AxisPoint::Checkpoint { epoch }
    }

    pub fn kind(&self) -> AxisKind {
        match self {
            AxisPoint::PromptSlot { .. } => AxisKind::PromptSlot,
            AxisPoint::Temperature { .. } => AxisKind::Temperature,
            AxisPoint::Checkpoint { .. } => AxisKind::Checkpoint,
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            AxisPoint::PromptSlot { slot, .. } => *slot as f64,
            AxisPoint::Temperature { value } => *value,
            AxisPoint::Checkpoint { epoch } => *epoch as f64,
        }
    }

    /// Sampling temperature implied by the point (1 for non-temperature axes).
    pub fn sampling_temperature(&self) -> f64 {
        match self {
            AxisPoint::Temperature { value } => *value,
            _ => 1.0,
        }
    }
}

impl fmt::Display for AxisPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisPoint::PromptSlot { slot, prompt } => write!(f, "prompt_slot={slot} ({prompt:?})"),
            AxisPoint::Temperature { value } => write!(f, "temperature={value}"),
            AxisPoint::Checkpoint { epoch } => write!(f, "checkpoint={epoch}"),
        }
    }
}

/// Substitutes every `{T}` in `template`.
pub fn render_prompt(template: &str, value: i64) -> String {
    template.replace("{T}", &value.to_string())
}

/// Scored generation: the two primitives the estimator needs.
pub trait AutoregressiveModel: Send + Sync {
    /// Samples `n_samples` continuations of `n_tokens` tokens, token by token.
    /// Deterministic for a fixed `seed`.
    fn generate(
        &self,
        point: &AxisPoint,
        n_samples: usize,
        n_tokens: usize,
        seed: u64,
    ) -> Result<Vec<TokenSequence>>;

    /// Total log-probability (nats) of `tokens` as a continuation at `point`.
    fn score(&self, point: &AxisPoint, tokens: &[TokenId]) -> Result<f64>;

    /// Greedy decoding; ties go to the lowest token id.
    fn argmax_sample(&self, point: &AxisPoint, n_tokens: usize) -> Result<TokenSequence>;
}

impl<M: AutoregressiveModel + ?Sized> AutoregressiveModel for &M {
    fn generate(&self, point: &AxisPoint, n: usize, t: usize, seed: u64) -> Result<Vec<TokenSequence>> {
        (**self).generate(point, n, t, seed)
    }

    fn score(&self, point: &AxisPoint, tokens: &[TokenId]) -> Result<f64> {
        (**self).score(point, tokens)
    }

    fn argmax_sample(&self, point: &AxisPoint, n_tokens: usize) -> Result<TokenSequence> {
        (**self).argmax_sample(point, n_tokens)
    }
}

impl<M: AutoregressiveModel + ?Sized> AutoregressiveModel for Box<M> {
    fn generate(&self, point: &AxisPoint, n: usize, t: usize, seed: u64) -> Result<Vec<TokenSequence>> {
        (**self).generate(point, n, t, seed)
    }

    fn score(&self, point: &AxisPoint, tokens: &[TokenId]) -> Result<f64> {
        (**self).score(point, tokens)
    }

    fn argmax_sample(&self, point: &AxisPoint, n_tokens: usize) -> Result<TokenSequence> {
        (**self).argmax_sample(point, n_tokens)
    }
}

/// Deterministic per-stream seed (splitmix64 finalizer over `seed` and `stream`).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
