mod common;

use proptest::prelude::*;

use phasescan::models::{
    AutoregressiveModel, AxisPoint, LogitPiece, LogitTable, TabularModel,
};

/// Random model with V in 2..=4, N in 1..=3 and per-context rows.
fn model() -> impl Strategy<Value = TabularModel> {
    (2usize..=4, 1usize..=3).prop_flat_map(|(v, n)| {
        let contexts: usize = (0..n).map(|k| v.pow(k as u32)).sum();
        prop::collection::vec(prop::collection::vec(-4.0f64..4.0, v), contexts).prop_map(move |rows| {
            TabularModel::new(v, n, vec![LogitPiece::constant(0.0, LogitTable::Rows(rows))]).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_equals_per_step_softmax(m in model(), t in 0.05f64..5.0, seed in any::<u64>()) {
        let point = AxisPoint::temperature(t);
        let n = m.max_len();
        for s in m.generate(&point, 4, n, seed).unwrap() {
            let mut manual = 0.0;
            for i in 0..n {
                let z = m.logits(&s.tokens[..i], &point).unwrap();
                manual += common::softmax(&z, t)[s.tokens[i] as usize].ln();
            }
            let score = m.score(&point, &s.tokens).unwrap();
            prop_assert!((score - manual).abs() < 1e-9);
            prop_assert!((score - s.total_logprob()).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_distribution_marginalizes(m in model(), t in 0.1f64..3.0) {
        let point = AxisPoint::temperature(t);
        let n = m.max_len();
        let full = m.exact_distribution_len(&point, n).unwrap();
        let v = m.vocab_size();
        if n > 1 {
            let shorter = m.exact_distribution_len(&point, n - 1).unwrap();
            for (i, p) in shorter.probs().iter().enumerate() {
                let sum: f64 = full.probs()[i * v..(i + 1) * v].iter().sum();
                prop_assert!((sum - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_prompt_scores_are_finite(m in model(), a in 0i64..50, b in 0i64..50, seed in any::<u64>()) {
        let pa = AxisPoint::prompt_slot(a, "{T} apples");
        let pb = AxisPoint::prompt_slot(b, "{T} apples");
        for s in m.generate(&pb, 3, m.max_len(), seed).unwrap() {
            prop_assert!(m.score(&pa, &s.tokens).unwrap().is_finite());
        }
    }
}
