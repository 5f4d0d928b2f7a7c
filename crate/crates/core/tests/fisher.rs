//! Small-step limit: dissimilarity between neighbouring temperatures divided
//! by `dT^2` approaches a multiple of the Fisher information.

mod common;

use phasescan::divergence::{
    exact_g_dissimilarity, fisher_coefficient_via_f, fisher_coefficient_via_g, fisher_shift_constant,
    g_shift, FiniteDistribution, GSpec,
};
use phasescan::models::{AxisPoint, TabularModel};
use phasescan::scan::{exact_trial_estimate, ParameterGrid};

const LOGITS: [f64; 5] = [0.0, 1.0, -0.5, 2.0, 0.3];
const T_STAR: f64 = 1.0;
const DT: f64 = 1e-3;

/// `Var_p(z) / T^4` for `p = softmax(z / T)`.
fn fisher_information(t: f64) -> f64 {
    let p = common::softmax(&LOGITS, t);
    let mean: f64 = p.iter().zip(LOGITS).map(|(p, z)| p * z).sum();
    let var: f64 = p.iter().zip(LOGITS).map(|(p, z)| p * (z - mean).powi(2)).sum();
    var / t.powi(4)
}

fn model() -> TabularModel {
    TabularModel::iid(LOGITS.len(), 1, vec![(0.0, LOGITS.to_vec())]).unwrap()
}

fn trial_grid() -> ParameterGrid {
    let pts = [-0.5, 0.5, 1.5].map(|k| AxisPoint::temperature(T_STAR + k * DT)).to_vec();
    ParameterGrid::from_points(pts, 1).unwrap()
}

#[test]
fn analytic_fisher_matches_finite_difference_of_scores() {
    let h = 1e-5;
    let lp = |t: f64| common::softmax(&LOGITS, t).iter().map(|p| p.ln()).collect::<Vec<_>>();
    let p = common::softmax(&LOGITS, T_STAR);
    let (a, b) = (lp(T_STAR + h), lp(T_STAR - h));
    let f: f64 = (0..LOGITS.len()).map(|i| p[i] * ((a[i] - b[i]) / (2.0 * h)).powi(2)).sum();
    assert!((f / fisher_information(T_STAR) - 1.0).abs() < 1e-6);
}

#[test]
fn small_step_limit_for_linear_and_js() {
    let fi = fisher_information(T_STAR);
    // Closed-form f''(1): (x-1)^2 / (2(1+x)) and the Jensen-Shannon generator.
    for (g, f2) in [(GSpec::linear(), 0.5), (GSpec::js(), 0.25)] {
        let d = exact_trial_estimate(&model(), &trial_grid(), &g, 0, 1).unwrap();
        let ratio = d / (0.5 * f2 * fi * DT * DT);
        assert!((ratio - 1.0).abs() < 0.02, "{}: ratio {ratio}", g.label());
        assert!((fisher_coefficient_via_f(&g) - 0.5 * f2).abs() < 1e-6);
    }
}

#[test]
fn both_derivation_routes_agree() {
    // With c = g'(1/2)/4 the shifted g has zero slope at 1/2 and its
    // curvature gives the same coefficient as the f route.
    for (g, slope, coeff) in [(GSpec::linear(), 2.0, 0.25), (GSpec::js(), 2.0, 0.125)] {
        let c = fisher_shift_constant(&g);
        assert!((c - slope / 4.0).abs() < 1e-6);
        let shifted = g_shift(&g, c);
        assert!(shifted.derivative_at_half().abs() < 1e-6);
        assert!((fisher_coefficient_via_g(&g) - coeff).abs() < 1e-5);
        assert!((fisher_coefficient_via_f(&g) - coeff).abs() < 1e-5);

        let p = FiniteDistribution::new(common::softmax(&LOGITS, T_STAR - DT / 2.0)).unwrap();
        let q = FiniteDistribution::new(common::softmax(&LOGITS, T_STAR + DT / 2.0)).unwrap();
        let d = exact_g_dissimilarity(&shifted, &p, &q).unwrap();
        let ratio = d / (fisher_coefficient_via_g(&g) * fisher_information(T_STAR) * DT * DT);
        assert!((ratio - 1.0).abs() < 0.02, "{}: {ratio}", g.label());
    }
}

#[test]
fn sixth_of_slope_leaves_first_order_term() {
    let g = GSpec::linear();
    let shifted = g_shift(&g, g.derivative_at_half() / 6.0);
    assert!(shifted.derivative_at_half().abs() > 0.5);
    let wrong = shifted.second_derivative_at_half() / 32.0;
    // 1/6 against 1/4: a third too small.
    assert!((wrong / fisher_coefficient_via_f(&g) - 1.0).abs() > 0.3);
}
