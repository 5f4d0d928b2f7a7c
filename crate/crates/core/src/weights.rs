//! Dissimilarity of weight distributions across training checkpoints.
//!
//! Each checkpoint's weights are binned into a histogram whose bin
//! probabilities are known exactly, so curves need no sampling.
//!
//! On disk, one layer's weights at one epoch are a flat dump:
//!
//! ```text
//! b"WTSDUMP1" | count: u64 LE | count x f32 LE
//! ```
//!
//! A manifest lists the dumps of one layer, with file paths relative to the
//! manifest: `{"layer": "...", "epochs": [{"epoch": 0, "file": "e0.bin"}]}`.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{exact_g_dissimilarity, FiniteDistribution, GSpec};
use crate::models::AxisPoint;
use crate::scan::{DissimilarityCurve, ParameterGrid, ScanError};

pub const DUMP_MAGIC: &[u8; 8] = b"WTSDUMP1";
pub const DEFAULT_BINS: usize = 10_000;
pub const DEFAULT_RANGE: (f64, f64) = (-3.0, 3.0);

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("no weights to bin")]
    EmptyInput,
    #[error("weight {index} is NaN")]
    NaN { index: usize },
    #[error("invalid binning: {0}")]
    InvalidBins(String),
    #[error("histograms use different bin configurations: {0}")]
    MixedBins(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("malformed weight dump {path}: {reason}")]
    MalformedDump { path: PathBuf, reason: String },
    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scan(#[from] ScanError),
}

pub type Result<T, E = WeightsError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WeightsError + '_ {
    move |source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Uniform bins over `[lo, hi)`; out-of-range values land in the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHistogram {
    pub bin_count: usize,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub normalized: FiniteDistribution,
}

impl WeightHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn same_bins(&self, other: &Self) -> bool {
        self.bin_count == other.bin_count && self.lo == other.lo && self.hi == other.hi
    }
}

pub fn histogram_weights<T: Copy + Into<f64> + Sync>(
    values: &[T],
    bin_count: usize,
    lo: f64,
    hi: f64,
) -> Result<WeightHistogram> {
    if bin_count == 0 {
        return Err(WeightsError::InvalidBins("bin_count must be at least 1".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(WeightsError::InvalidBins(format!("need finite lo < hi, got [{lo}, {hi})")));
    }
    if values.is_empty() {
        return Err(WeightsError::EmptyInput);
    }
    let scale = bin_count as f64 / (hi - lo);
    let last = (bin_count - 1) as f64;
    let counts = values
        .par_chunks(1 << 16)
        .enumerate()
        .try_fold(
            || vec![0u64; bin_count],
            |mut acc, (c, chunk)| {
                for (j, &v) in chunk.iter().enumerate() {
                    let x: f64 = v.into();
                    if x.is_nan() {
                        return Err(WeightsError::NaN { index: (c << 16) + j });
                    }
                    let b = ((x - lo) * scale).floor().clamp(0.0, last);
                    acc[b as usize] += 1;
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0u64; bin_count],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let normalized = FiniteDistribution::from_weights(counts.iter().map(|&c| c as f64).collect())
        .expect("non-empty counts");
    Ok(WeightHistogram {
        bin_count,
        lo,
        hi,
        counts,
        normalized,
    })
}

/// One histogram per checkpoint of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    pub layer_label: String,
    pub epochs: Vec<i64>,
    pub histograms: Vec<WeightHistogram>,
}

impl CheckpointSeries {
    /// Epochs strictly increasing; one histogram each, all binned alike.
    pub fn new(layer_label: impl Into<String>, epochs: Vec<i64>, histograms: Vec<WeightHistogram>) -> Result<Self> {
        if epochs.len() != histograms.len() {
            return Err(WeightsError::InvalidSeries(format!(
                "{} epochs but {} histograms",
                epochs.len(),
                histograms.len()
            )));
        }
        if epochs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WeightsError::InvalidSeries("epochs must be strictly increasing".into()));
        }
        if let Some(h) = histograms.iter().find(|h| !h.same_bins(&histograms[0])) {
            let h0 = &histograms[0];
            return Err(WeightsError::MixedBins(format!(
                "{} bins over [{}, {}) vs {} bins over [{}, {})",
                h0.bin_count, h0.lo, h0.hi, h.bin_count, h.lo, h.hi
            )));
        }
        Ok(Self {
            layer_label: layer_label.into(),
            epochs,
            histograms,
        })
    }
}

/// Exact dissimilarity between left and right segment mixture histograms at
/// every trial point of the (uniform) epoch grid. Stderr is zero.
pub fn series_dissimilarity(series: &CheckpointSeries, g: &GSpec, segment_len: usize) -> Result<DissimilarityCurve> {
    let points = series.epochs.iter().map(|&e| AxisPoint::checkpoint(e)).collect();
    let grid = ParameterGrid::from_points(points, segment_len)?;
    let mix = |r: std::ops::Range<usize>| {
        let parts: Vec<&FiniteDistribution> = series.histograms[r].iter().map(|h| &h.normalized).collect();
        FiniteDistribution::mixture(&parts)
    };
    let estimates = (0..grid.n_trial())
        .into_par_iter()
        .map(|k| {
            let left = mix(grid.left_segment(k)).map_err(ScanError::from)?;
            let right = mix(grid.right_segment(k)).map_err(ScanError::from)?;
            Ok(exact_g_dissimilarity(g, &left, &right).map_err(ScanError::from)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DissimilarityCurve {
        axis: grid.kind(),
        g_label: g.label().to_string(),
        segment_len,
        n_batches: 0,
        trial_values: grid.trial_values(),
        stderr: vec![0.0; estimates.len()],
        estimates,
    })
}

pub fn write_weight_dump(path: &Path, values: &[f32]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

pub fn read_weight_dump(path: &Path) -> Result<Vec<f32>> {
    let malformed = |reason: String| WeightsError::MalformedDump {
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let file_len = file.metadata().map_err(io_err(path))?.len();
    let mut r = BufReader::new(file);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| malformed(format!("file of {file_len} bytes is shorter than the header")))?;
    if &header[..8] != DUMP_MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let count = u64::from_le_bytes(header[8..].try_into().expect("8 bytes"));
    let expected = count.checked_mul(4).and_then(|b| b.checked_add(16));
    if expected != Some(file_len) {
        return Err(malformed(format!("header declares {count} values but file has {file_len} bytes")));
    }
    let mut bytes = Vec::with_capacity(count as usize * 4);
    r.read_to_end(&mut bytes).map_err(io_err(path))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub epoch: i64,
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub layer: String,
    pub epochs: Vec<ManifestEntry>,
}

impl WeightManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| WeightsError::Manifest {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Writes one dump per epoch into `dir` plus `manifest.json`; returns the
/// manifest path.
pub fn write_series(dir: &Path, layer: &str, epochs: &[(i64, Vec<f32>)]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(epochs.len());
    for (epoch, values) in epochs {
        let file = PathBuf::from(format!("epoch_{epoch}.bin"));
        write_weight_dump(&dir.join(&file), values)?;
        entries.push(ManifestEntry { epoch: *epoch, file });
    }
    let manifest = WeightManifest {
        layer: layer.to_string(),
        epochs: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| WeightsError::Manifest {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

/// Reads every dump listed in the manifest (in parallel) and bins it.
pub fn load_series(manifest_path: &Path, bin_count: usize, lo: f64, hi: f64) -> Result<CheckpointSeries> {
    let manifest = WeightManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let histograms = manifest
        .epochs
        .par_iter()
        .map(|e| {
            let values = read_weight_dump(&base.join(&e.file))?;
            histogram_weights(&values, bin_count, lo, hi)
        })
        .collect::<Result<Vec<_>>>()?;
    CheckpointSeries::new(manifest.layer, manifest.epochs.iter().map(|e| e.epoch).collect(), histograms)
}
