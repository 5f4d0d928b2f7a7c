//! Run configuration: a versioned JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use phasescan::models::{AxisKind, ModelEndpoint, TabularModel};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;
pub const BRIDGE_URL_ENV: &str = "TRANSITION_BRIDGE_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<AxisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsSpec>,
    #[serde(default = "default_g")]
    pub g: Vec<String>,
    /// Segment half-widths; empty means the axis default.
    #[serde(default, rename = "L")]
    pub segment_lens: Vec<usize>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_tokens")]
    pub n_tokens: usize,
    #[serde(default = "default_batches")]
    pub n_batches: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub peaks: PeakSettings,
}

fn default_g() -> Vec<String> {
    vec!["linear".into()]
}

fn default_samples() -> usize {
    512
}

fn default_tokens() -> usize {
    10
}

fn default_batches() -> usize {
    phasescan::scan::DEFAULT_BATCHES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// A tabular model, from a JSON file or inline.
    Tabular {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<TabularModel>,
    },
    /// A bridge server. `base_url` falls back to `TRANSITION_BRIDGE_URL`.
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_url: Option<String>,
        model_id: String,
        revision: String,
        #[serde(default)]
        prompt: String,
        #[serde(default = "default_revision_template")]
        revision_template: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cache_dir: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_timeout: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_in_flight: Option<usize>,
    },
}

fn default_revision_template() -> String {
    "step{T}".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub kind: AxisKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    pub n_points: usize,
    /// Prompt template for the prompt-slot axis; `{T}` marks the slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
}

impl AxisSpec {
    /// Temperature scans default to `[1e-4, 2]`; other axes need explicit bounds.
    pub fn bounds(&self) -> Result<(f64, f64), CliError> {
        let defaults = match self.kind {
            AxisKind::Temperature => (Some(1e-4), Some(2.0)),
            _ => (None, None),
        };
        match (self.start.or(defaults.0), self.stop.or(defaults.1)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(CliError::validation(format!("axis `{}` needs start and stop", self.kind))),
        }
    }

    pub fn default_segment_lens(&self) -> Vec<usize> {
        match self.kind {
            AxisKind::PromptSlot => vec![3],
            AxisKind::Temperature => vec![5],
            AxisKind::Checkpoint => vec![1, 6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    /// One manifest per layer.
    pub manifests: Vec<PathBuf>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

fn default_bins() -> usize {
    phasescan::weights::DEFAULT_BINS
}

fn default_lo() -> f64 {
    phasescan::weights::DEFAULT_RANGE.0
}

fn default_hi() -> f64 {
    phasescan::weights::DEFAULT_RANGE.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakSettings {
    #[serde(default = "default_sigmas")]
    pub min_prominence_sigmas: f64,
    /// Flanking dissimilarity at most this multiple of the baseline marks an
    /// outlier suspect.
    #[serde(default = "default_outlier_multiple")]
    pub outlier_baseline_multiple: f64,
    #[serde(default = "default_true")]
    pub annotate_outliers: bool,
}

fn default_sigmas() -> f64 {
    3.0
}

fn default_outlier_multiple() -> f64 {
    2.0
}

fn default_true() -> bool {
    true
}

impl Default for PeakSettings {
    fn default() -> Self {
        Self {
            min_prominence_sigmas: default_sigmas(),
            outlier_baseline_multiple: default_outlier_multiple(),
            annotate_outliers: true,
        }
    }
}

impl Config {
    /// An empty configuration with every default in place.
    pub fn empty() -> Self {
        serde_json::from_value(serde_json::json!({ "version": CONFIG_VERSION })).expect("defaults")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Config = serde_json::from_str(text)
            .map_err(|e| CliError::validation(format!("config: {e}")))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::validation(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.model {
            Some(ModelSpec::Tabular { path: Some(p), .. }) => fix(p),
            Some(ModelSpec::Remote { cache_dir: Some(p), .. }) => fix(p),
            _ => {}
        }
        if let Some(w) = &mut self.weights {
            w.manifests.iter_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.g.is_empty() {
            return Err(CliError::validation("no g-functions selected"));
        }
        for g in &self.g {
            g.parse::<phasescan::divergence::GSpec>()
                .map_err(|e| CliError::validation(e.to_string()))?;
        }
        if self.segment_lens.contains(&0) {
            return Err(CliError::validation("L must be at least 1"));
        }
        if self.n_samples == 0 || self.n_tokens == 0 {
            return Err(CliError::validation("n_samples and n_tokens must be at least 1"));
        }
        if self.n_batches < 2 || self.n_samples % self.n_batches != 0 {
            return Err(CliError::validation(format!(
                "n_batches = {} must be >= 2 and divide n_samples = {}",
                self.n_batches, self.n_samples
            )));
        }
        Ok(())
    }
}

/// Builds an endpoint, taking the URL from the config or the environment.
pub fn endpoint_from(
    base_url: Option<&str>,
    env_url: Option<&str>,
    model_id: &str,
    revision: &str,
) -> Result<ModelEndpoint, CliError> {
    let url = base_url.or(env_url).ok_or_else(|| {
        CliError::validation(format!("no bridge URL: set model.base_url or {BRIDGE_URL_ENV}"))
    })?;
    Ok(ModelEndpoint::new(url, model_id, revision))
}
