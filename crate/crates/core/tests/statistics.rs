use flowmap_ensemble::predict::average_states;
use flowmap_ensemble::stats::{
    bias_variance_mse, chi2_cdf, chi2_critical_value, chi2_gof_gaussian, chi2_sf, ErrorSample,
};
use flowmap_ensemble::VarianceConvention;
use proptest::prelude::*;

fn ulp(x: f64) -> f64 {
    let b = x.abs().to_bits();
    f64::from_bits(b + 1) - f64::from_bits(b)
}

proptest! {
    // Values on a 2^-40 grid make the exact mean a rational we can compare in integers.
    #[test]
    fn mean_of_vectors_within_one_ulp(
        ticks in prop::collection::vec(prop::collection::vec((1u64 << 39)..(1u64 << 43), 3), 1..60),
    ) {
        let scale = 2f64.powi(-40);
        let vectors: Vec<Vec<f64>> = ticks.iter().map(|v| v.iter().map(|&n| n as f64 * scale).collect()).collect();
        let k = vectors.len() as i128;
        let mean = average_states(&vectors);
        for c in 0..3 {
            let sum: i128 = ticks.iter().map(|v| v[c] as i128).sum();
            // mean * 2^53 is an integer for means in [0.5, 8)
            let got = (mean[c] * 2f64.powi(53)) as i128;
            let exact_times_k = sum << 13;
            let tol = (ulp(mean[c]) * 2f64.powi(53)) as i128 * k;
            prop_assert!((got * k - exact_times_k).abs() <= tol);
        }
    }

    #[test]
    fn mean_of_identical_vectors_is_exact(v in prop::collection::vec(-1e6f64..1e6, 1..5), k in 1usize..40) {
        prop_assert_eq!(average_states(&vec![v.clone(); k]), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn mse_is_biased_variance_plus_squared_bias(
        raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 2..80),
        offset in -10.0f64..10.0,
        spread in 1e-4f64..10.0,
    ) {
        let samples: Vec<ErrorSample> = raw
            .iter()
            .map(|v| ErrorSample { values: v.iter().map(|x| offset + spread * x).collect() })
            .collect();
        let s = bias_variance_mse(&samples, VarianceConvention::BiasedN).unwrap();
        for c in 0..2 {
            let rhs = s.variance[c] + s.bias[c] * s.bias[c];
            prop_assert!((s.mse[c] - rhs).abs() <= 1e-12 * s.mse[c].abs().max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn gof_is_invariant_under_affine_rescaling(
        z in prop::collection::vec(-3.0f64..3.0, 100..400),
        mean in -5.0f64..5.0,
        sd in 0.1f64..3.0,
        factor in 1e-3f64..1e3,
    ) {
        let xs: Vec<f64> = z.iter().map(|t| mean + sd * t).collect();
        let scaled: Vec<f64> = xs.iter().map(|x| x * factor).collect();
        let a = chi2_gof_gaussian(&xs, mean, sd * sd, 0.05, 10).unwrap();
        let b = chi2_gof_gaussian(&scaled, mean * factor, (sd * factor).powi(2), 0.05, 10).unwrap();
        prop_assert_eq!(a.statistic, b.statistic);
        prop_assert_eq!(a.reject, b.reject);
    }

    #[test]
    fn chi2_cdf_dof4_closed_form(x in 0.0f64..60.0) {
        let exact = 1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0);
        prop_assert!((chi2_cdf(x, 4) - exact).abs() < 1e-12);
        prop_assert!((chi2_cdf(x, 4) + chi2_sf(x, 4) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reject_iff_p_below_alpha_iff_statistic_above_critical(
        z in prop::collection::vec(-2.0f64..2.5, 50..300),
        alpha in 0.01f64..0.2,
    ) {
        let r = chi2_gof_gaussian(&z, 0.0, 1.0, alpha, 8).unwrap();
        prop_assert_eq!(r.reject, r.p_value < alpha);
        prop_assert_eq!(r.reject, r.statistic > r.critical_value);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

#[test]
fn chi2_cdf_matches_quadrature() {
    // dof 1 with x = t^2 removes the singularity at zero.
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    let q = simpson(
        |t| 2.0 * (-t * t / 2.0).exp() / norm,
        0.0,
        3.841f64.sqrt(),
        4000,
    );
    assert!((chi2_cdf(3.841, 1) - q).abs() < 1e-10);
    assert!((chi2_cdf(3.841, 1) - 0.95).abs() < 1e-4);

    // dof 3: density sqrt(x) e^{-x/2} / (2^{3/2} Gamma(3/2)), again with x = t^2.
    let c3 = 2f64.powf(1.5) * std::f64::consts::PI.sqrt() / 2.0;
    let q3 = simpson(
        |t| 2.0 * t * t * (-t * t / 2.0).exp() / c3,
        0.0,
        7.0f64.sqrt(),
        4000,
    );
    assert!((chi2_cdf(7.0, 3) - q3).abs() < 1e-10);

    // dof 10: Gamma(5) = 24.
    let q10 = simpson(
        |x| x.powi(4) * (-x / 2.0).exp() / (32.0 * 24.0),
        0.0,
        12.5,
        4000,
    );
    assert!((chi2_cdf(12.5, 10) - q10).abs() < 1e-10);
}

#[test]
fn chi2_cdf_closed_forms() {
    assert_eq!(chi2_cdf(0.0, 5), 0.0);
    assert!((chi2_cdf(2.0, 2) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    assert!((chi2_cdf(2.0, 2) - 0.6321206).abs() < 1e-7);
}

#[test]
fn critical_value_inverts_cdf() {
    for dof in [1, 2, 7, 9, 29] {
        for alpha in [0.01, 0.05, 0.1] {
            let c = chi2_critical_value(alpha, dof);
            assert!(
                (chi2_sf(c, dof) - alpha).abs() < 1e-10,
                "dof {dof} alpha {alpha}"
            );
        }
    }
    assert!((chi2_critical_value(0.05, 9) - 16.919).abs() < 1e-3);
}
