//! Randomized invariants of the transform, likelihood, estimators and EBLUP.

mod common;

use common::{draw, from_h, scenario};
use proptest::prelude::*;
use tfh::lambda::TOL_LAMBDA_PER_AREA;
use tfh::transform::Transform;
use tfh::variance::{estimating_equation, TOL_A_PER_AREA};
use tfh::{
    eblup, fit, log_likelihood, profile_score, score_lambda, Dataset, ModelParams, TransformKind, VarianceMethod,
};

fn close(numeric: f64, exact: f64, tol: f64) -> bool {
    (numeric - exact).abs() <= tol * (1.0 + exact.abs())
}

fn small_dataset(h: &[f64], d: &[f64], lambda: f64) -> Dataset {
    let t = Transform::dual_power(lambda).unwrap();
    let x: Vec<Vec<f64>> = (0..h.len()).map(|i| vec![1.0, (i as f64 * 0.9).cos()]).collect();
    from_h(&t, h, d, &x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transform_roundtrip_and_monotone(log_y in -6.0f64..6.0, gap in 1e-3f64..2.0, lambda in 0.0f64..3.0) {
        let t = Transform::dual_power(lambda).unwrap();
        let y = log_y.exp();
        let back = t.inverse(t.h(y));
        prop_assert!((back - y).abs() <= 1e-10 * y, "{y} -> {back}");
        let y2 = (log_y + gap).exp();
        prop_assert!(t.h(y2) > t.h(y));
    }

    #[test]
    fn transform_derivatives_match_finite_differences(log_y in -4.0f64..4.0, lambda in 0.05f64..2.5) {
        let y = log_y.exp();
        let t = Transform::dual_power(lambda).unwrap();
        let der = t.derivatives(y).unwrap();
        let at = |l: f64| Transform::dual_power(l).unwrap();
        let sl = 1e-5;
        let sy = 1e-5 * y;
        let h_y = (t.h(y + sy) - t.h(y - sy)) / (2.0 * sy);
        let h_l = (at(lambda + sl).h(y) - at(lambda - sl).h(y)) / (2.0 * sl);
        let h_ll = (at(lambda + sl).h_lambda(y) - at(lambda - sl).h_lambda(y)) / (2.0 * sl);
        let h_yl = (at(lambda + sl).derivatives(y).unwrap().h_y - at(lambda - sl).derivatives(y).unwrap().h_y) / (2.0 * sl);
        prop_assert!(close(h_y, der.h_y, 1e-6), "h_y {h_y} vs {}", der.h_y);
        prop_assert!(close(h_l, der.h_lambda, 1e-6), "h_l {h_l} vs {}", der.h_lambda);
        prop_assert!(close(h_ll, der.h_lambda_lambda, 1e-6), "h_ll {h_ll} vs {}", der.h_lambda_lambda);
        prop_assert!(close(h_yl, der.h_y_lambda, 1e-6), "h_yl {h_yl} vs {}", der.h_y_lambda);
    }

    #[test]
    fn score_is_likelihood_derivative(
        h in prop::collection::vec(-2.0f64..2.0, 6..12),
        a in 0.0f64..2.0,
        lambda in 0.05f64..2.0,
        b0 in -1.0f64..1.0,
        b1 in -1.0f64..1.0,
    ) {
        let d: Vec<f64> = (0..h.len()).map(|i| 0.1 + 0.1 * (i % 5) as f64).collect();
        let ds = small_dataset(&h, &d, 0.7);
        let params = ModelParams { beta: vec![b0, b1], a, lambda };
        let score = score_lambda(&ds, &params, TransformKind::DualPower).unwrap();
        let step = 1e-5;
        let ll = |l: f64| log_likelihood(&ds, &ModelParams { lambda: l, ..params.clone() }).unwrap();
        let fd = (ll(lambda + step) - ll(lambda - step)) / (2.0 * step);
        prop_assert!(close(fd, score, 1e-6), "fd {fd} vs score {score}");
    }

    #[test]
    fn eblup_is_convex_combination(
        h in prop::collection::vec(-2.0f64..2.0, 6..12),
        a in 0.0f64..3.0,
        lambda in 0.05f64..2.0,
    ) {
        let d: Vec<f64> = (0..h.len()).map(|i| 0.05 + 0.15 * (i % 4) as f64).collect();
        let ds = small_dataset(&h, &d, lambda);
        let f = tfh::fit_fixed_lambda(&ds, VarianceMethod::ML, TransformKind::DualPower, lambda).unwrap();
        let f = tfh::FitResult { params: ModelParams { a, ..f.params }, ..f };
        for p in eblup(&ds, &f).unwrap() {
            let (lo, hi) = (p.h_direct.min(p.synthetic), p.h_direct.max(p.synthetic));
            prop_assert!(lo - 1e-12 <= p.eta_hat && p.eta_hat <= hi + 1e-12);
            prop_assert_eq!(p.shrinkage_weight, a / (a + p.d));
            if a == 0.0 {
                prop_assert_eq!(p.eta_hat, p.synthetic);
            }
        }
        let collapsed = tfh::FitResult { params: ModelParams { a: 0.0, ..f.params.clone() }, ..f };
        for p in eblup(&ds, &collapsed).unwrap() {
            prop_assert_eq!(p.eta_hat, p.synthetic);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fitted_estimators_satisfy_certificates(seed in 0u64..10_000, lambda in 0.2f64..1.2) {
        let ds = draw(&scenario("certificates", 30, 0.4, lambda, seed), 0);
        let m = ds.m() as f64;
        for method in VarianceMethod::ALL {
            let f = fit(&ds, method, TransformKind::DualPower).unwrap();
            if !f.converged {
                continue;
            }
            if f.params.lambda > 0.0 {
                let score = profile_score(&ds, f.params.lambda, method).unwrap().f_value;
                prop_assert!(score.abs() <= TOL_LAMBDA_PER_AREA * m, "{method:?}: F = {score}");
            }
            if method == VarianceMethod::PR {
                continue;
            }
            let h = ds.transformed(&f.transform());
            let g = estimating_equation(&ds, &h, f.params.a, method).unwrap();
            if f.a_estimate.truncated_at_zero {
                prop_assert!(estimating_equation(&ds, &h, 0.0, method).unwrap() <= 0.0);
            } else {
                prop_assert!(g.abs() <= TOL_A_PER_AREA * m, "{method:?}: G = {g}");
            }
        }
    }

    #[test]
    fn fits_are_permutation_invariant(seed in 0u64..10_000, shift in 1usize..29) {
        let ds = draw(&scenario("permutation", 30, 0.4, 0.6, seed), 0);
        let mut areas = ds.areas();
        areas.rotate_left(shift);
        let permuted = Dataset::new(areas).unwrap();
        for method in [VarianceMethod::ML, VarianceMethod::REML] {
            let a = fit(&ds, method, TransformKind::DualPower).unwrap();
            let b = fit(&permuted, method, TransformKind::DualPower).unwrap();
            prop_assert_eq!(a.converged, b.converged);
            prop_assert!((a.params.lambda - b.params.lambda).abs() <= 1e-8 * (1.0 + a.params.lambda));
            prop_assert!((a.params.a - b.params.a).abs() <= 1e-8 * (1.0 + a.params.a));
        }
    }
}
