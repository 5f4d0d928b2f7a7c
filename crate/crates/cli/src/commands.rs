//! Subcommand implementations. All numerics live in the core crate; this
//! module wires configuration to it and writes artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use phasescan::divergence::GSpec;
use phasescan::models::{AutoregressiveModel, AxisKind, DiskCache, RemoteModel, TabularModel};
use phasescan::scan::{
    annotate_outliers, build_grid, detect_peaks, estimate_curve, read_curve_csv, stage1_generate,
    write_curve_csv, write_curve_json, DissimilarityCurve, ParameterGrid, PeakReport, SampleStore,
};
use phasescan::thermo::{heat_capacity, mean_energy_from_store, overlay, overlay_summary, write_overlay_csv, write_thermal_csv};
use phasescan::weights::{load_series, series_dissimilarity};

use crate::config::{endpoint_from, AxisSpec, Config, ModelSpec, BRIDGE_URL_ENV};
use crate::error::CliError;

/// Written next to the outputs of every run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Config,
    pub seed: u64,
    pub point_seeds: Vec<u64>,
    pub timings_ms: BTreeMap<String, u128>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

impl RunManifest {
    fn new(command: &'static str, config: &Config) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: config.clone(),
            seed: config.seed,
            point_seeds: Vec::new(),
            timings_ms: BTreeMap::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn record(self, manifest: &mut RunManifest, stage: &str) {
        *manifest.timings_ms.entry(stage.to_string()).or_default() += self.0.elapsed().as_millis();
    }
}

fn create_file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn g_specs(cfg: &Config) -> Result<Vec<GSpec>, CliError> {
    cfg.g
        .iter()
        .map(|s| s.parse::<GSpec>().map_err(|e| CliError::validation(e.to_string())))
        .collect()
}

fn segment_lens(cfg: &Config, axis: &AxisSpec) -> Vec<usize> {
    if cfg.segment_lens.is_empty() {
        axis.default_segment_lens()
    } else {
        cfg.segment_lens.clone()
    }
}

/// Builds the model named in the config. A remote `base_url` falls back to
/// the `TRANSITION_BRIDGE_URL` environment variable.
pub fn build_model(cfg: &Config) -> Result<Box<dyn AutoregressiveModel>, CliError> {
    match cfg.model.as_ref() {
        None => Err(CliError::validation("config has no model")),
        Some(ModelSpec::Tabular { path, model }) => {
            let m = match (path, model) {
                (Some(p), None) => TabularModel::load(p)?,
                (None, Some(m)) => m.clone(),
                _ => {
                    return Err(CliError::validation(
                        "tabular model needs exactly one of `path` or `model`",
                    ))
                }
            };
            Ok(Box::new(m))
        }
        Some(ModelSpec::Remote {
            base_url,
            model_id,
            revision,
            prompt,
            revision_template,
            cache_dir,
            request_timeout,
            max_in_flight,
        }) => {
            let env = std::env::var(BRIDGE_URL_ENV).ok();
            let mut endpoint = endpoint_from(base_url.as_deref(), env.as_deref(), model_id, revision)?;
            if let Some(t) = request_timeout {
                endpoint.request_timeout = std::time::Duration::try_from_secs_f64(*t)
                    .map_err(|e| CliError::validation(format!("request_timeout: {e}")))?;
            }
            if let Some(n) = max_in_flight {
                endpoint.max_in_flight = *n;
            }
            let mut client = RemoteModel::connect(endpoint)?
                .with_prompt(prompt.clone())
                .with_revision_template(revision_template.clone());
            if let Some(dir) = cache_dir {
                client = client.with_cache(DiskCache::open(dir).map_err(|e| CliError::io(dir, e))?);
            }
            Ok(Box::new(client))
        }
    }
}

/// Grid with the largest requested `L`, so every smaller `L` fits too.
fn base_grid(axis: &AxisSpec, lens: &[usize]) -> Result<ParameterGrid, CliError> {
    let (start, stop) = axis.bounds()?;
    let max_l = lens.iter().copied().max().unwrap_or(1);
    let mut grid = build_grid(axis.kind, start, stop, axis.n_points, max_l)?;
    if let Some(t) = &axis.prompt_template {
        grid = grid.with_prompt_template(t);
    }
    Ok(grid)
}

fn curve_stem(g: &GSpec, l: usize) -> String {
    format!("{}_L{l}", g.label())
}

fn write_curve(out: &Path, prefix: &str, curve: &DissimilarityCurve, manifest: &mut RunManifest) -> Result<(), CliError> {
    let csv = out.join(format!("{prefix}.csv"));
    write_curve_csv(curve, create_file(&csv)?)?;
    let json = out.join(format!("{prefix}.json"));
    write_curve_json(curve, create_file(&json)?)?;
    manifest.outputs.push(file_name(&csv));
    manifest.outputs.push(file_name(&json));
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

struct ScanState {
    model: Box<dyn AutoregressiveModel>,
    store: SampleStore,
    grid: ParameterGrid,
    curves: Vec<(GSpec, usize, DissimilarityCurve)>,
}

fn run_dissimilarity(cfg: &Config, out: &Path, manifest: &mut RunManifest) -> Result<ScanState, CliError> {
    cfg.validate()?;
    let axis = cfg.axis.as_ref().ok_or_else(|| CliError::validation("config has no axis"))?;
    let gs = g_specs(cfg)?;
    let lens = segment_lens(cfg, axis);
    let grid = base_grid(axis, &lens)?;
    ensure_dir(out)?;

    let t = Timer::start();
    let model = build_model(cfg)?;
    t.record(manifest, "connect");

    let t = Timer::start();
    let store = stage1_generate(&model, &grid, cfg.n_samples, cfg.n_tokens, cfg.seed)?;
    t.record(manifest, "stage1");
    log::info!(
        "stage 1: {} sequences over {} points ({} distinct)",
        store.n_sequences(),
        grid.len(),
        store.unique_sequences().len()
    );
    manifest.point_seeds = store.point_seeds().to_vec();

    let mut curves = Vec::new();
    for g in &gs {
        for &l in &lens {
            let grid_l = grid.with_segment_len(l)?;
            let t = Timer::start();
            let curve = estimate_curve(&model, &store, &grid_l, g, cfg.n_batches)?;
            t.record(manifest, "stage2");
            let stem = curve_stem(g, l);
            log::info!("stage 2 done for {stem}");
            write_curve(out, &format!("curve_{stem}"), &curve, manifest)?;

            let mut report = detect_peaks(&curve, cfg.peaks.min_prominence_sigmas);
            if cfg.peaks.annotate_outliers {
                let t = Timer::start();
                annotate_outliers(
                    &mut report,
                    &model,
                    &store,
                    &grid_l,
                    g,
                    cfg.n_batches,
                    cfg.peaks.outlier_baseline_multiple,
                )?;
                t.record(manifest, "outliers");
            }
            let path = out.join(format!("peaks_{stem}.json"));
            write_json(&path, &report)?;
            manifest.outputs.push(file_name(&path));
            curves.push((g.clone(), l, curve));
        }
    }
    Ok(ScanState {
        model,
        store,
        grid,
        curves,
    })
}

/// Dissimilarity scan: one curve, peak report and JSON mirror per (g, L).
pub fn cmd_scan(cfg: &Config, out: &Path) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::new("scan", cfg);
    run_dissimilarity(cfg, out, &mut manifest)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Temperature scan plus mean energy, heat capacity and an overlay table.
pub fn cmd_thermo(cfg: &Config, out: &Path) -> Result<RunManifest, CliError> {
    if cfg.axis.as_ref().map(|a| a.kind) != Some(AxisKind::Temperature) {
        return Err(CliError::validation("thermo needs a temperature axis"));
    }
    let mut manifest = RunManifest::new("thermo", cfg);
    let state = run_dissimilarity(cfg, out, &mut manifest)?;
    debug_assert_eq!(state.store.points(), state.grid.points());

    let t = Timer::start();
    let thermal = heat_capacity(&mean_energy_from_store(&state.model, &state.store, cfg.n_batches)?)?;
    t.record(&mut manifest, "energy");
    let path = out.join("thermal.csv");
    write_thermal_csv(&thermal, create_file(&path)?)?;
    manifest.outputs.push(file_name(&path));

    let mut summaries = serde_json::Map::new();
    for (g, l, curve) in &state.curves {
        let rows = overlay(curve, &thermal)?;
        let stem = curve_stem(g, *l);
        let path = out.join(format!("overlay_{stem}.csv"));
        write_overlay_csv(&rows, create_file(&path)?)?;
        manifest.outputs.push(file_name(&path));
        summaries.insert(stem, serde_json::to_value(overlay_summary(&rows)).unwrap_or_default());
    }
    manifest.summary = serde_json::Value::Object(summaries);
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Serialize)]
struct LayerReport {
    layer: String,
    manifest: PathBuf,
    epochs: Vec<i64>,
    reports: Vec<PeakReport>,
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Exact curves over checkpoint weight histograms, per layer, plus a merged
/// peak report.
pub fn cmd_weights(cfg: &Config, out: &Path) -> Result<RunManifest, CliError> {
    let spec = cfg.weights.as_ref().ok_or_else(|| CliError::validation("config has no weights section"))?;
    if spec.manifests.is_empty() {
        return Err(CliError::validation("no weight manifests given"));
    }
    let gs = g_specs(cfg)?;
    let lens = if cfg.segment_lens.is_empty() {
        vec![1, 6]
    } else {
        cfg.segment_lens.clone()
    };
    ensure_dir(out)?;
    let mut manifest = RunManifest::new("weights", cfg);
    let mut layers = Vec::new();
    for path in &spec.manifests {
        let t = Timer::start();
        let series = load_series(path, spec.bins, spec.lo, spec.hi)?;
        t.record(&mut manifest, "ingest");
        let layer = sanitize(&series.layer_label);
        log::info!("layer {}: {} epochs", series.layer_label, series.epochs.len());
        let mut reports = Vec::new();
        for g in &gs {
            for &l in &lens {
                let curve = series_dissimilarity(&series, g, l)?;
                write_curve(out, &format!("weights_{layer}_{}", curve_stem(g, l)), &curve, &mut manifest)?;
                reports.push(detect_peaks(&curve, cfg.peaks.min_prominence_sigmas));
            }
        }
        layers.push(LayerReport {
            layer: series.layer_label.clone(),
            manifest: path.clone(),
            epochs: series.epochs.clone(),
            reports,
        });
    }
    let path = out.join("weights_report.json");
    write_json(&path, &layers)?;
    manifest.outputs.push(file_name(&path));
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Peak detection on an existing curve CSV.
pub fn cmd_peaks(curve: &Path, min_prominence_sigmas: f64) -> Result<PeakReport, CliError> {
    let file = fs::File::open(curve).map_err(|e| CliError::io(curve, e))?;
    let curve = read_curve_csv(file)?;
    Ok(detect_peaks(&curve, min_prominence_sigmas))
}

/// Writes a peak report to `out` or stdout.
pub fn emit_peaks(report: &PeakReport, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(p) => write_json(p, report),
        None => {
            use std::io::Write;
            let text = serde_json::to_string_pretty(report).map_err(|e| CliError::validation(e.to_string()))?;
            match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::io(Path::new("<stdout>"), e)),
                _ => Ok(()),
            }
        }
    }
}
