//! Acceptance checks. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero if any criterion fails.
//!
//! Reference values come from the oracle below, which enumerates sequences
//! with its own softmax and evaluates dissimilarities by direct summation.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use phasescan::divergence::{
    exact_g_dissimilarity, f_divergence, fisher_coefficient_via_f, fisher_coefficient_via_g,
    fisher_shift_constant, g_shift, js_divergence, tv_distance, FFunction, FiniteDistribution,
    GSpec,
};
use phasescan::models::{AxisKind, LogitPiece, LogitTable, TabularModel};
use phasescan::numeric::median;
use phasescan::scan::{
    annotate_outliers, build_grid, detect_peaks, estimate_curve, exact_curve, exact_trial_estimate,
    flanking_dissimilarity, run_scan, stage1_generate, DissimilarityCurve, ParameterGrid,
};
use phasescan::thermo::{exact_thermal_curve, heat_capacity, mean_energy_curve};
use phasescan::weights::{load_series, series_dissimilarity, write_series};
use phasescan::models::AxisPoint;
use phasescan_cli::{cmd_scan, Config};

const SEED: u64 = 1;

const A1_TOL: f64 = 1e-10;
const A1_PAIRS: usize = 500;
const A1_MAX_RUNTIME: Duration = Duration::from_secs(5);
const A2_TOL: f64 = 1e-10;
const A3_TOL: f64 = 1e-10;
const A3_CASES: usize = 100;
const A4_SAMPLES: usize = 50_000;
const A4_BATCHES: usize = 4;
const A4_WIDE_SIGMAS: f64 = 3.0;
const A4_NARROW_SIGMAS: f64 = 2.0;
/// Out of 19 trial points one may leave the 2-stderr band; the same single
/// miss is allowed on grids with fewer trial points.
const A4_NARROW_MISSES: usize = 1;
const A4_MAX_RUNTIME: Duration = Duration::from_secs(120);
const A5_DT: f64 = 1e-3;
const A5_TOL: f64 = 0.02;
const A5_ROUTE_TOL: f64 = 1e-5;
const A6_SIGMAS: f64 = 3.0;
const A6_NOISE_SIGMAS: f64 = 3.0;
const A7_MC_SIGMAS: f64 = 4.0;
const A7_NEG_SIGMAS: f64 = 3.0;
const A7_ORACLE_TOL: f64 = 1e-10;
const A8_PEAK_MULTIPLE: f64 = 5.0;
const A8_FLANK_MULTIPLE: f64 = 2.0;
const A9_BINS: usize = 10_000;
const A9_RANGE: (f64, f64) = (-3.0, 3.0);

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("A1", "f-g correspondence", a1),
        ("A2", "closed-form TV and JS", a2),
        ("A3", "g shift freedom", a3),
        ("A4", "sampled estimator vs exact", a4),
        ("A5", "small-step Fisher limit", a5),
        ("A6", "step detection on a prompt axis", a6),
        ("A7", "heat capacity", a7),
        ("A8", "outlier diagnostic", a8),
        ("A9", "weight histogram pipeline", a9),
        ("A10", "determinism of cmd_scan", a10),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {id} {name}: {msg} [{secs:.2} s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {id} {name}: {msg} [{secs:.2} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

mod oracle {
    pub fn softmax(z: &[f64], t: f64) -> Vec<f64> {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| ((v - m) / t).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// All length-`n` sequences over `v` tokens, first token most significant.
    pub fn sequences(v: usize, n: usize) -> Vec<Vec<u32>> {
        (0..v.pow(n as u32))
            .map(|mut idx| {
                let mut s = vec![0u32; n];
                for slot in s.iter_mut().rev() {
                    *slot = (idx % v) as u32;
                    idx /= v;
                }
                s
            })
            .collect()
    }

    /// Sequence probabilities when every step is `softmax(step(prefix) / t)`.
    pub fn sequence_probs(v: usize, n: usize, t: f64, step: impl Fn(&[u32]) -> Vec<f64>) -> Vec<f64> {
        sequences(v, n)
            .iter()
            .map(|s| (0..n).map(|i| softmax(&step(&s[..i]), t)[s[i] as usize]).product())
            .collect()
    }

    pub fn g(name: &str, x: f64) -> f64 {
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
                d += 0.5 * a * g(name, a / (a + b));
            }
            if b > 0.0 {
                d += 0.5 * b * g(name, b / (a + b));
            }
        }
        d
    }

    pub fn tv(p: &[f64], q: &[f64]) -> f64 {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    pub fn js(p: &[f64], q: &[f64]) -> f64 {
        let kl_m = |a: &[f64], b: &[f64]| -> f64 {
            a.iter()
                .zip(b)
                .filter(|(x, _)| **x > 0.0)
                .map(|(x, y)| x * (x / (0.5 * (x + y))).ln())
                .sum()
        };
        0.5 * kl_m(p, q) + 0.5 * kl_m(q, p)
    }

    pub fn mixture(parts: &[&Vec<f64>]) -> Vec<f64> {
        let mut m = vec![0.0; parts[0].len()];
        for p in parts {
            for (a, b) in m.iter_mut().zip(p.iter()) {
                *a += b / parts.len() as f64;
            }
        }
        m
    }

    pub fn trial(name: &str, probs: &[Vec<f64>], k: usize, l: usize) -> f64 {
        let left: Vec<&Vec<f64>> = probs[k..k + l].iter().collect();
        let right: Vec<&Vec<f64>> = probs[k + l..k + 2 * l].iter().collect();
        dissimilarity(name, &mixture(&left), &mixture(&right))
    }

    /// Mean energy `sum_x P_T(x) E(x)` with `E(x) = -ln P_1(x)`, both under
    /// per-token temperature sampling.
    pub fn mean_energy(v: usize, n: usize, t: f64, step: impl Fn(&[u32]) -> Vec<f64> + Copy) -> f64 {
        let p_t = sequence_probs(v, n, t, step);
        let p_1 = sequence_probs(v, n, 1.0, step);
        p_t.iter().zip(&p_1).filter(|(p, _)| **p > 0.0).map(|(p, q)| -p * q.ln()).sum()
    }
}

fn random_pair(rng: &mut ChaCha8Rng, allow_zeros: bool) -> (Vec<f64>, Vec<f64>) {
    let n = rng.random_range(2..=16);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let w: Vec<f64> = (0..n)
                .map(|_| {
                    if allow_zeros && rng.random_bool(0.15) {
                        0.0
                    } else {
                        rng.random_range(0.05..1.0)
                    }
                })
                .collect();
            let s: f64 = w.iter().sum();
            if s > 0.0 {
                return w.into_iter().map(|x| x / s).collect();
            }
        }
    };
    let p = draw(rng);
    let q = draw(rng);
    (p, q)
}

fn dist(p: &[f64]) -> FiniteDistribution {
    FiniteDistribution::new(p.to_vec()).unwrap()
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..A1_PAIRS {
        let (p, q) = random_pair(&mut rng, true);
        let (pd, qd) = (dist(&p), dist(&q));
        for g in GSpec::builtins() {
            let via_g = exact_g_dissimilarity(&g, &pd, &qd).map_err(|e| e.to_string())?;
            let via_f = f_divergence(&FFunction::from_g(&g), &pd, &qd).map_err(|e| e.to_string())?;
            let naive = oracle::dissimilarity(oracle_name(&g), &p, &q);
            worst = worst.max((via_g - via_f).abs()).max((via_g - naive).abs());
        }
    }
    let elapsed = start.elapsed();
    ensure(worst <= A1_TOL, || format!("max deviation {worst:e} > {A1_TOL:e}"))?;
    ensure(elapsed < A1_MAX_RUNTIME, || format!("runtime {elapsed:?}"))?;
    Ok(format!("{A1_PAIRS} pairs x 3 g, max deviation {worst:.1e}, {:.3} s", elapsed.as_secs_f64()))
}

fn oracle_name(g: &GSpec) -> &'static str {
    match g.label() {
        "linear" => "linear",
        "js" => "js",
        "tv" => "tv",
        other => panic!("unexpected g {other}"),
    }
}

fn a2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_tv, mut worst_js): (f64, f64) = (0.0, 0.0);
    for _ in 0..A1_PAIRS {
        let (p, q) = random_pair(&mut rng, true);
        let (pd, qd) = (dist(&p), dist(&q));
        let d_tv = exact_g_dissimilarity(&GSpec::tv(), &pd, &qd).unwrap();
        let d_js = exact_g_dissimilarity(&GSpec::js(), &pd, &qd).unwrap();
        let tv = tv_distance(&pd, &qd).unwrap();
        let js = js_divergence(&pd, &qd).unwrap();
        worst_tv = worst_tv.max((d_tv - tv).abs()).max((tv - oracle::tv(&p, &q)).abs());
        worst_js = worst_js.max((d_js - js).abs()).max((js - oracle::js(&p, &q)).abs());
    }
    ensure(worst_tv <= A2_TOL && worst_js <= A2_TOL, || {
        format!("max deviation TV {worst_tv:e}, JS {worst_js:e}")
    })?;
    Ok(format!("TV max deviation {worst_tv:.1e}, JS {worst_js:.1e}"))
}

fn a3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..A3_CASES {
        let g = GSpec::builtins()[rng.random_range(0..3)].clone();
        let c: f64 = rng.random_range(-3.0..3.0);
        // common support: no zero entries
        let (p, q) = random_pair(&mut rng, false);
        let (pd, qd) = (dist(&p), dist(&q));
        let base = exact_g_dissimilarity(&g, &pd, &qd).unwrap();
        let shifted = exact_g_dissimilarity(&g_shift(&g, c), &pd, &qd).unwrap();
        worst = worst.max((base - shifted).abs());
    }
    ensure(worst <= A3_TOL, || format!("max deviation {worst:e}"))?;
    Ok(format!("{A3_CASES} cases, max deviation {worst:.1e}"))
}

/// Smooth crossover around 10 plus context dependence on the last token.
fn a4_logits(prefix: &[u32], t: f64) -> Vec<f64> {
    let s = ((t - 10.0) / 2.5).tanh();
    let last = prefix.last().map_or(0.0, |&x| x as f64 - 1.5);
    vec![
        1.2 * s,
        -0.6 * s + 0.3 * last,
        0.2 * prefix.len() as f64,
        -0.5 + 0.4 * s * last,
    ]
}

fn grid_model(v: usize, n: usize, values: &[f64], f: fn(&[u32], f64) -> Vec<f64>) -> TabularModel {
    let pieces = values
        .iter()
        .map(|&t| LogitPiece::constant(t, LogitTable::from_fn(v, n, |p| f(p, t))))
        .collect();
    TabularModel::new(v, n, pieces).unwrap()
}

fn a4() -> Outcome {
    let (v, n, l) = (4, 3, 3);
    let start = Instant::now();
    let grid = build_grid(AxisKind::Checkpoint, 0.0, 20.0, 21, l).map_err(|e| e.to_string())?;
    let values = grid.values();
    let model = grid_model(v, n, &values, a4_logits);
    let curve = run_scan(&model, &grid, &GSpec::linear(), A4_SAMPLES, n, SEED, A4_BATCHES)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    let probs: Vec<Vec<f64>> = values
        .iter()
        .map(|&t| oracle::sequence_probs(v, n, 1.0, |p| a4_logits(p, t)))
        .collect();
    let z: Vec<f64> = (0..grid.n_trial())
        .map(|k| (curve.estimates[k] - oracle::trial("linear", &probs, k, l)) / curve.stderr[k])
        .collect();
    let wide_misses: Vec<String> = z
        .iter()
        .enumerate()
        .filter(|(_, z)| z.abs() > A4_WIDE_SIGMAS)
        .map(|(k, z)| format!("{}: z={z:.2}", curve.trial_values[k]))
        .collect();
    let narrow_misses = z.iter().filter(|z| z.abs() > A4_NARROW_SIGMAS).count();
    let max_z = z.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let summary = format!(
        "{} trial points, {}/{} within {A4_WIDE_SIGMAS} se, {}/{} within {A4_NARROW_SIGMAS} se, max |z| {max_z:.2}, {:.1} s",
        z.len(),
        z.len() - wide_misses.len(),
        z.len(),
        z.len() - narrow_misses,
        z.len(),
        elapsed.as_secs_f64()
    );
    ensure(wide_misses.is_empty(), || format!("{summary}; outside: {}", wide_misses.join(", ")))?;
    ensure(narrow_misses <= A4_NARROW_MISSES, || summary.clone())?;
    ensure(elapsed < A4_MAX_RUNTIME, || summary.clone())?;
    Ok(summary)
}

const A5_LOGITS: [f64; 5] = [0.0, 1.0, -0.5, 2.0, 0.3];

fn a5() -> Outcome {
    let t_star = 1.0;
    let p = oracle::softmax(&A5_LOGITS, t_star);
    let mean: f64 = p.iter().zip(A5_LOGITS).map(|(p, z)| p * z).sum();
    let fisher = p.iter().zip(A5_LOGITS).map(|(p, z)| p * (z - mean).powi(2)).sum::<f64>() / t_star.powi(4);

    let model = TabularModel::iid(A5_LOGITS.len(), 1, vec![(0.0, A5_LOGITS.to_vec())]).unwrap();
    let pts = [-0.5, 0.5, 1.5].map(|k| AxisPoint::temperature(t_star + k * A5_DT)).to_vec();
    let grid = ParameterGrid::from_points(pts, 1).map_err(|e| e.to_string())?;

    let mut notes = Vec::new();
    // f''(1) of the induced generators, in closed form.
    for (g, f2) in [(GSpec::linear(), 0.5), (GSpec::js(), 0.25)] {
        let d = exact_trial_estimate(&model, &grid, &g, 0, 1).map_err(|e| e.to_string())?;
        let ratio = d / (0.5 * f2 * fisher * A5_DT * A5_DT);
        ensure((ratio - 1.0).abs() < A5_TOL, || format!("{}: ratio {ratio}", g.label()))?;

        let via_f = fisher_coefficient_via_f(&g);
        let via_g = fisher_coefficient_via_g(&g);
        ensure((via_f - 0.5 * f2).abs() < A5_ROUTE_TOL && (via_g - via_f).abs() < A5_ROUTE_TOL, || {
            format!("{}: coefficient via f {via_f}, via g {via_g}, expected {}", g.label(), 0.5 * f2)
        })?;
        let c = fisher_shift_constant(&g);
        ensure((c - g.derivative_at_half() / 4.0).abs() < 1e-9, || format!("shift constant {c}"))?;
        let sixth = g_shift(&g, g.derivative_at_half() / 6.0).second_derivative_at_half() / 32.0;
        notes.push(format!(
            "{} ratio {ratio:.5}, routes {via_f:.6}/{via_g:.6} (slope/6 would give {sixth:.4})",
            g.label()
        ));
    }
    Ok(notes.join("; "))
}

fn a6_model() -> TabularModel {
    let before = LogitTable::from_fn(4, 3, |p| match p.last() {
        Some(&t) => vec![0.5, 0.0, -0.3, 0.2 * t as f64],
        None => vec![0.0, 0.3, 0.0, -0.2],
    });
    let after = LogitTable::from_fn(4, 3, |p| match p.last() {
        Some(&t) => vec![-0.8, 1.0, 0.4 * t as f64, 0.0],
        None => vec![1.5, -0.5, 0.0, 0.4],
    });
    TabularModel::new(4, 3, vec![LogitPiece::constant(0.0, before), LogitPiece::constant(42.0, after)]).unwrap()
}

fn single_peak(curve: &DissimilarityCurve) -> Result<(f64, f64, f64), String> {
    let report = detect_peaks(curve, A6_SIGMAS);
    let values: Vec<f64> = report.peaks.iter().map(|p| p.trial_value).collect();
    ensure(report.peaks.len() == 1, || format!("L={}: peaks at {values:?}", curve.segment_len))?;
    let p = &report.peaks[0];
    ensure(p.trial_value == 41.5 || p.trial_value == 42.5, || {
        format!("L={}: peak at {}", curve.segment_len, p.trial_value)
    })?;
    Ok((p.trial_value, p.estimate, p.stderr))
}

fn a6() -> Outcome {
    let model = a6_model();
    let lens = [1, 3, 6];
    let base = build_grid(AxisKind::PromptSlot, 0.0, 100.0, 101, 6)
        .map_err(|e| e.to_string())?
        .with_prompt_template("{T} is larger than 42. True or False?");
    let store = stage1_generate(&model, &base, 2000, 3, SEED).map_err(|e| e.to_string())?;
    let mut sampled = Vec::new();
    let mut exact = Vec::new();
    for l in lens {
        let grid = base.with_segment_len(l).map_err(|e| e.to_string())?;
        let curve = estimate_curve(&model, &store, &grid, &GSpec::linear(), 4).map_err(|e| e.to_string())?;
        sampled.push(single_peak(&curve)?);
        let curve = exact_curve(&model, &grid, &GSpec::linear(), 3).map_err(|e| e.to_string())?;
        exact.push(single_peak(&curve)?);
    }
    for w in exact.windows(2) {
        ensure(w[1].1 >= w[0].1 - 1e-12, || format!("exact peak decreases: {exact:?}"))?;
    }
    // A pure step has equal true peak heights, so the sampled sequence is
    // non-decreasing up to noise.
    for w in sampled.windows(2) {
        let slack = A6_NOISE_SIGMAS * w[0].2.hypot(w[1].2);
        ensure(w[1].1 >= w[0].1 - slack, || format!("sampled peak decreases: {sampled:?}"))?;
    }
    let fmt = |v: &[(f64, f64, f64)]| {
        v.iter().zip(lens).map(|((t, e, _), l)| format!("L={l}@{t}:{e:.4}")).collect::<Vec<_>>().join(" ")
    };
    Ok(format!("sampled {}; exact {}", fmt(&sampled), fmt(&exact)))
}

fn two_level_logits() -> Vec<f64> {
    vec![0.0, -1.0]
}

fn witness_step(p: &[u32]) -> Vec<f64> {
    match p {
        [] => vec![0.4, 0.0, -30.0, -30.0],
        [1] => vec![5.0, 0.0, 0.0, 0.0],
        _ => vec![0.0; 4],
    }
}

fn witness_model() -> TabularModel {
    TabularModel::new(4, 2, vec![LogitPiece::constant(0.0, LogitTable::from_fn(4, 2, witness_step))]).unwrap()
}

fn a7() -> Outcome {
    // Two levels with gap 1: C = p(1-p)/T^2, p the upper-level occupation.
    let ts: Vec<f64> = (1..=15).map(|i| 0.1 * i as f64 + 0.1).collect();
    let analytic_u = |t: f64| {
        let p = (-1.0 / t).exp() / (1.0 + (-1.0 / t).exp());
        (1.0 + (-1f64).exp()).ln() + p
    };
    let analytic_c = |t: f64| {
        let p = (-1.0 / t).exp() / (1.0 + (-1.0 / t).exp());
        p * (1.0 - p) / (t * t)
    };
    let model = TabularModel::iid(2, 1, vec![(0.0, two_level_logits())]).unwrap();
    let sampled = heat_capacity(&mean_energy_curve(&model, &ts, 32_000, 1, SEED, 16).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut worst_ratio: f64 = 0.0;
    for i in 1..ts.len() - 1 {
        let c = sampled.heat_capacity[i].unwrap();
        let fd = (analytic_u(ts[i + 1]) - analytic_u(ts[i - 1])) / (ts[i + 1] - ts[i - 1]);
        let fd_err = (fd - analytic_c(ts[i])).abs();
        let tol = A7_MC_SIGMAS * sampled.hc_stderr[i].unwrap() + fd_err;
        let dev = (c - analytic_c(ts[i])).abs();
        worst_ratio = worst_ratio.max(dev / tol);
        ensure(dev <= tol, || format!("two-level T={}: C {c} vs {} (tol {tol})", ts[i], analytic_c(ts[i])))?;
    }

    let wts: Vec<f64> = (1..=20).map(|i| 0.1 * i as f64).collect();
    let oracle_u: Vec<f64> = wts.iter().map(|&t| oracle::mean_energy(4, 2, t, witness_step)).collect();
    let exact = exact_thermal_curve(&witness_model(), &wts, 2).map_err(|e| e.to_string())?;
    let u_dev = exact.mean_energy.iter().zip(&oracle_u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(u_dev < A7_ORACLE_TOL, || format!("witness mean energy deviates from enumeration by {u_dev:e}"))?;
    let oracle_c: Vec<(usize, f64)> = (1..wts.len() - 1)
        .map(|i| (i, (oracle_u[i + 1] - oracle_u[i - 1]) / (wts[i + 1] - wts[i - 1])))
        .collect();
    let &(i_min, c_min) = oracle_c.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    ensure(c_min < 0.0, || "enumeration shows no negative heat capacity".into())?;
    let lib_c = heat_capacity(&exact).map_err(|e| e.to_string())?.heat_capacity[i_min].unwrap();
    ensure((lib_c - c_min).abs() < 1e-8, || format!("library C {lib_c} vs enumeration {c_min}"))?;
    let sampled = heat_capacity(&mean_energy_curve(&witness_model(), &wts, 40_000, 2, SEED, 8).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (c, se) = (sampled.heat_capacity[i_min].unwrap(), sampled.hc_stderr[i_min].unwrap());
    ensure(c + A7_NEG_SIGMAS * se < 0.0, || format!("sampled witness C {c} +- {se} at T={}", wts[i_min]))?;
    Ok(format!(
        "two-level worst |dev|/tol {worst_ratio:.2}; witness C(T={:.1}) exact {c_min:.4}, sampled {c:.4} +- {se:.4}",
        wts[i_min]
    ))
}

fn a8() -> Outcome {
    let (n_points, outlier) = (31usize, 15usize);
    // Alternating near-identical distributions with a single deviating point.
    let row = |i: usize| -> Vec<f64> {
        if i == outlier {
            vec![0.0, 1.3, 0.0]
        } else if i % 2 == 1 {
            vec![0.3, 0.0, 0.0]
        } else {
            vec![0.0, 0.0, 0.0]
        }
    };
    let model = TabularModel::iid(3, 2, (0..n_points).map(|i| (i as f64, row(i))).collect()).unwrap();
    let g = GSpec::linear();
    let base = build_grid(AxisKind::Checkpoint, 0.0, (n_points - 1) as f64, n_points, 6).map_err(|e| e.to_string())?;
    let store = stage1_generate(&model, &base, 20_000, 2, SEED).map_err(|e| e.to_string())?;

    let grid1 = base.with_segment_len(1).map_err(|e| e.to_string())?;
    let curve1 = estimate_curve(&model, &store, &grid1, &g, 4).map_err(|e| e.to_string())?;
    let baseline = median(&curve1.estimates);
    ensure(baseline > 0.0, || "baseline is zero".into())?;
    let left = curve1.estimates[outlier - 1];
    let right = curve1.estimates[outlier];
    let flank = flanking_dissimilarity(&model, &store, &grid1, &g, outlier, 4).map_err(|e| e.to_string())?;
    let summary = format!(
        "baseline {baseline:.4}; adjacent {left:.4}/{right:.4}; flanking {:.4}",
        flank.estimate
    );
    ensure(left > A8_PEAK_MULTIPLE * baseline && right > A8_PEAK_MULTIPLE * baseline, || summary.clone())?;
    ensure(flank.estimate < A8_FLANK_MULTIPLE * baseline, || summary.clone())?;

    let mut report = detect_peaks(&curve1, 3.0);
    annotate_outliers(&mut report, &model, &store, &grid1, &g, 4, A8_FLANK_MULTIPLE).map_err(|e| e.to_string())?;
    ensure(report.peaks.iter().any(|p| p.is_outlier_suspect), || format!("{summary}; no peak flagged"))?;

    let grid6 = base.with_segment_len(6).map_err(|e| e.to_string())?;
    let curve6 = estimate_curve(&model, &store, &grid6, &g, 4).map_err(|e| e.to_string())?;
    let threshold = A8_PEAK_MULTIPLE * baseline;
    let max6 = curve6.estimates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let over: Vec<f64> = detect_peaks(&curve6, 3.0)
        .peaks
        .iter()
        .filter(|p| p.estimate > threshold)
        .map(|p| p.trial_value)
        .collect();
    ensure(over.is_empty() && max6 < threshold, || format!("{summary}; L=6 max {max6:.4} vs threshold {threshold:.4}"))?;
    Ok(format!("{summary}; L=6 max {max6:.4} < {threshold:.4}"))
}

fn a9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let change_epoch = 6i64;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let narrow = Normal::new(0.0f32, 0.5).unwrap();
    let wide = Normal::new(0.0f32, 1.0).unwrap();
    let epochs: Vec<(i64, Vec<f32>)> = (0..12)
        .map(|e| {
            let d = if e < change_epoch { narrow } else { wide };
            (e, (0..200_000).map(|_| d.sample(&mut rng)).collect())
        })
        .collect();
    let manifest = write_series(&dir.path().join("two"), "two_regime", &epochs).map_err(|e| e.to_string())?;
    let series = load_series(&manifest, A9_BINS, A9_RANGE.0, A9_RANGE.1).map_err(|e| e.to_string())?;
    let curve = series_dissimilarity(&series, &GSpec::linear(), 3).map_err(|e| e.to_string())?;
    let peak = curve.trial_values[curve.argmax().unwrap()];
    ensure(peak == change_epoch as f64 - 0.5, || format!("peak at {peak}"))?;

    let flat: Vec<(i64, Vec<f32>)> = (0..12).map(|e| (e, epochs[0].1.clone())).collect();
    let manifest = write_series(&dir.path().join("flat"), "flat", &flat).map_err(|e| e.to_string())?;
    let series = load_series(&manifest, A9_BINS, A9_RANGE.0, A9_RANGE.1).map_err(|e| e.to_string())?;
    let flat_curve = series_dissimilarity(&series, &GSpec::linear(), 3).map_err(|e| e.to_string())?;
    ensure(flat_curve.estimates.iter().all(|&d| d == 0.0), || format!("flat curve {:?}", flat_curve.estimates))?;
    Ok(format!(
        "peak {peak:.1} (D={:.4}), flat series all zero over {} trial points",
        curve.estimates[curve.argmax().unwrap()],
        flat_curve.len()
    ))
}

fn a10() -> Outcome {
    let cfg = Config::from_json(
        r#"{
            "version": 1,
            "model": {"type": "tabular", "model": {
                "vocab_size": 4, "max_len": 3,
                "pieces": [
                    {"start": 0, "logits": [0.0, 0.2, -0.1, 0.3]},
                    {"start": 9, "logits": [1.0, -0.5, 0.0, 0.0]}
                ]
            }},
            "axis": {"kind": "checkpoint", "start": 0, "stop": 19, "n_points": 20},
            "g": ["linear", "js", "tv"],
            "L": [1, 3],
            "n_samples": 400,
            "n_tokens": 3,
            "seed": 11
        }"#,
    )
    .map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_scan(&cfg, &a).map_err(|e| e.to_string())?;
    cmd_scan(&cfg, &b).map_err(|e| e.to_string())?;
    let csvs = csv_files(&a);
    ensure(csvs.len() == 6, || format!("expected 6 CSV files, found {}", csvs.len()))?;
    for name in &csvs {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    ensure(csv_files(&b) == csvs, || "different file sets".into())?;
    Ok(format!("{} CSV files byte-identical", csvs.len()))
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}
