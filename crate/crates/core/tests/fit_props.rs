use proptest::prelude::*;
use sdnum::fit::{fit_concave_monotone, fit_scalar_pairs, PwlUtility, Sample, KKT_TOLERANCE};

fn distinct_scalar_samples() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::btree_set(0u32..40, 1..12).prop_flat_map(|ys| {
        let n = ys.len();
        let ys: Vec<f64> = ys.into_iter().map(|y| y as f64 * 0.5).collect();
        prop::collection::vec(-10.0f64..10.0, n).prop_map(move |us| ys.iter().copied().zip(us).collect())
    })
}

fn distinct_vector_samples(dim: usize) -> impl Strategy<Value = Vec<Sample>> {
    prop::collection::btree_set(prop::collection::vec(0u32..5, dim), 1..10).prop_flat_map(move |ys| {
        let n = ys.len();
        let ys: Vec<Vec<f64>> = ys.into_iter().map(|y| y.into_iter().map(f64::from).collect()).collect();
        prop::collection::vec(-5.0f64..5.0, n)
            .prop_map(move |us| ys.iter().cloned().zip(us).map(|(y, u)| Sample { y, u }).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn scalar_fit_is_concave_and_non_decreasing(pairs in distinct_scalar_samples()) {
        let f = fit_scalar_pairs(&pairs).unwrap();
        f.model.check_invariants().unwrap();
        prop_assert!(f.residuals.max() <= KKT_TOLERANCE);
        let a = f.model.anchors();
        for w in a.windows(2) {
            prop_assert!(w[1].u_hat >= w[0].u_hat - 1e-9);
        }
        for w in a.windows(3) {
            let s0 = (w[1].u_hat - w[0].u_hat) / (w[1].y[0] - w[0].y[0]);
            let s1 = (w[2].u_hat - w[1].u_hat) / (w[2].y[0] - w[1].y[0]);
            prop_assert!(s1 <= s0 + 1e-9);
        }
        // the fit interpolates its own anchors
        for x in a {
            prop_assert!((f.model.evaluate(&x.y) - x.u_hat).abs() < 1e-9);
        }
        prop_assert_eq!(PwlUtility::from_text(&f.model.to_text()).unwrap(), f.model);
    }

    #[test]
    fn vector_fit_satisfies_invariants(samples in distinct_vector_samples(2)) {
        let f = fit_concave_monotone(&samples).unwrap();
        f.model.check_invariants().unwrap();
        prop_assert!(f.residuals.max() <= KKT_TOLERANCE);
    }

    #[test]
    fn three_dimensional_fit_satisfies_invariants(samples in distinct_vector_samples(3)) {
        let f = fit_concave_monotone(&samples).unwrap_or_else(|e| panic!("{samples:?}: {e}"));
        f.model.check_invariants().unwrap();
    }

    #[test]
    fn nonnegativity_projection_is_non_expansive(
        a in prop::collection::vec(-10.0f64..10.0, 1..8),
        shift in prop::collection::vec(-10.0f64..10.0, 8),
    ) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let proj = |v: &[f64]| v.iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist(&proj(&a), &proj(&b)) <= dist(&a, &b) + 1e-12);
    }
}

#[test]
fn scalar_and_general_paths_agree_on_embedded_data() {
    // scalar data embedded on the first axis of a 2-d problem
    let pairs = [(0.0, 0.0), (1.0, 0.0), (2.0, 2.0), (3.0, 2.2)];
    let scalar = fit_scalar_pairs(&pairs).unwrap();
    let samples: Vec<Sample> = pairs.iter().map(|&(y, u)| Sample { y: vec![y, 0.0], u }).collect();
    let general = fit_concave_monotone(&samples).unwrap();
    assert!((scalar.objective - general.objective).abs() < 1e-5, "{} vs {}", scalar.objective, general.objective);
}
