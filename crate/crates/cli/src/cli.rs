use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_peaks, cmd_scan, cmd_thermo, cmd_weights, emit_peaks};
use crate::config::{Config, ModelSpec, WeightsSpec};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "phasescan", version, about = "Detect transitions in generative models by scanning a control parameter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dissimilarity scan over a prompt slot, temperature or checkpoint axis.
    Scan(RunArgs),
    /// Temperature scan with mean energy and heat capacity.
    Thermo(RunArgs),
    /// Exact dissimilarity over checkpoint weight histograms.
    Weights(WeightsArgs),
    /// Peak detection on an existing curve CSV.
    Peaks(PeaksArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// g-function: linear, js or tv. Repeatable.
    #[arg(long = "g")]
    pub g: Vec<String>,
    /// Segment half-width. Repeatable.
    #[arg(long = "L")]
    pub segment_lens: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub n_tokens: Option<usize>,
    #[arg(long)]
    pub n_batches: Option<usize>,
    /// Bridge URL; overrides the config, which overrides TRANSITION_BRIDGE_URL.
    #[arg(long)]
    pub bridge_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Layer manifest. Repeatable; replaces the config's list.
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub hi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PeaksArgs {
    #[arg(long)]
    pub curve: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub min_prominence_sigmas: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn load(path: Option<&PathBuf>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::empty()),
    }
}

impl CommonArgs {
    fn apply(&self, cfg: &mut Config) {
        if !self.g.is_empty() {
            cfg.g = self.g.clone();
        }
        if !self.segment_lens.is_empty() {
            cfg.segment_lens = self.segment_lens.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

impl RunArgs {
    /// Config file values with flags applied on top.
    pub fn resolve(&self) -> Result<Config, CliError> {
        let mut cfg = load(self.common.config.as_ref())?;
        self.common.apply(&mut cfg);
        if let Some(n) = self.n_samples {
            cfg.n_samples = n;
        }
        if let Some(n) = self.n_tokens {
            cfg.n_tokens = n;
        }
        if let Some(n) = self.n_batches {
            cfg.n_batches = n;
        }
        if let Some(url) = &self.bridge_url {
            match &mut cfg.model {
                Some(ModelSpec::Remote { base_url, .. }) => *base_url = Some(url.clone()),
                _ => return Err(CliError::validation("--bridge-url needs a remote model in the config")),
            }
        }
        Ok(cfg)
    }
}

impl WeightsArgs {
    pub fn resolve(&self) -> Result<Config, CliError> {
        let mut cfg = load(self.common.config.as_ref())?;
        self.common.apply(&mut cfg);
        let mut spec = cfg.weights.take().unwrap_or(WeightsSpec {
            manifests: Vec::new(),
            bins: phasescan::weights::DEFAULT_BINS,
            lo: phasescan::weights::DEFAULT_RANGE.0,
            hi: phasescan::weights::DEFAULT_RANGE.1,
        });
        if !self.manifest.is_empty() {
            spec.manifests = self.manifest.clone();
        }
        if let Some(b) = self.bins {
            spec.bins = b;
        }
        if let Some(lo) = self.lo {
            spec.lo = lo;
        }
        if let Some(hi) = self.hi {
            spec.hi = hi;
        }
        cfg.weights = Some(spec);
        Ok(cfg)
    }
}

/// Runs a parsed command; prints a one-line summary on success.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Scan(args) => {
            let m = cmd_scan(&args.resolve()?, &args.common.out)?;
            println!("wrote {} files to {}", m.outputs.len() + 1, args.common.out.display());
        }
        Command::Thermo(args) => {
            let m = cmd_thermo(&args.resolve()?, &args.common.out)?;
            println!("wrote {} files to {}", m.outputs.len() + 1, args.common.out.display());
        }
        Command::Weights(args) => {
            let m = cmd_weights(&args.resolve()?, &args.common.out)?;
            println!("wrote {} files to {}", m.outputs.len() + 1, args.common.out.display());
        }
        Command::Peaks(args) => {
            let cfg = load(args.config.as_ref())?;
            let sigmas = args.min_prominence_sigmas.unwrap_or(cfg.peaks.min_prominence_sigmas);
            let report = cmd_peaks(&args.curve, sigmas)?;
            emit_peaks(&report, args.out.as_deref())?;
        }
    }
    Ok(())
}
