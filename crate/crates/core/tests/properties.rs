//! Property tests for the documented invariants.

use dsm_curves::curves::{mp_stieltjes, CurvePoint};
use dsm_curves::glm::mmse_eta;
use dsm_curves::solver::{k_derivatives, k_value, residuals, solve_zetas};
use dsm_curves::{ActivationProfile, ModelPoint};
use proptest::prelude::*;

fn builtin() -> impl Strategy<Value = ActivationProfile> {
    prop_oneof![Just(ActivationProfile::relu()), Just(ActivationProfile::tanh()), Just(ActivationProfile::identity()),]
}

/// Hermite mixtures with a nonzero linear part.
fn hermite_profile() -> impl Strategy<Value = ActivationProfile> {
    (0.2f64..2.0, prop::collection::vec(-0.6f64..0.6, 0..4)).prop_map(|(c1, rest)| {
        let body: Vec<String> = std::iter::once(c1).chain(rest).map(|c| format!("{c}")).collect();
        ActivationProfile::parse(&format!("hermite:[{}]", body.join(","))).unwrap()
    })
}

fn point() -> impl Strategy<Value = ModelPoint> {
    (0.01f64..2.0, -4.0f64..0.0, 0.1f64..2.0, 0.5f64..50.0, 0.1f64..100.0, builtin()).prop_map(
        |(t, log_lambda, psi_d, psi_n, psi_p, rho)| {
            ModelPoint::new(t, 10f64.powf(log_lambda), psi_d, psi_n, psi_p, rho, ActivationProfile::identity()).unwrap()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_nondecreasing_and_bounded(rho in prop_oneof![builtin(), hermite_profile()], g1 in 0.0f64..1.0, g2 in 0.0f64..1.0) {
        let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
        prop_assert!(rho.c_gamma(lo) <= rho.c_gamma(hi) + 1e-10);
        prop_assert!(rho.c_gamma(0.0).abs() < 1e-10);
        prop_assert!((rho.c_gamma(1.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn standardization_is_idempotent(rho in hermite_profile()) {
        let (again, shift, scale) = rho.restandardize();
        prop_assert!(shift.abs() < 1e-10);
        prop_assert!((scale - 1.0).abs() < 1e-10);
        prop_assert!((again.mu1() - rho.mu1()).abs() < 1e-10);
        let mean = rho.expect(|f, _| f);
        let var = rho.expect(|f, _| f * f);
        prop_assert!(mean.abs() < 1e-10 && (var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solver_round_trips(p in point()) {
        let lam = p.lambda;
        let s = solve_zetas(&p, 0.0, -lam).unwrap();
        prop_assert!(s.residual_norm < 1e-10);
        let r = residuals(&s.as_array(), &p, 0.0, -lam).unwrap();
        prop_assert!(r.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10);
        prop_assert!(s.zeta1 > 0.0 && s.zeta2 > 0.0 && s.zeta3 > 0.0 && s.zeta4 > 0.0);
    }

    #[test]
    fn resolvent_derivative_signs(p in point()) {
        let kd = k_derivatives(&p).unwrap();
        prop_assert!(kd.dk_dz > 0.0);
        prop_assert!(kd.dk_dq < 0.0);
        prop_assert!(kd.agreement <= 1e-4);
    }

    #[test]
    fn larger_ridge_shrinks_k(p in point()) {
        let lam = p.lambda;
        let p10 = p.with_lambda(10.0 * lam).unwrap();
        prop_assert!(k_value(&p10, 0.0, -10.0 * lam).unwrap() < k_value(&p, 0.0, -lam).unwrap());
    }

    #[test]
    fn score_decomposition_is_exact(p in point()) {
        let c = CurvePoint::compute(&p).unwrap();
        if c.e_score > 0.0 {
            prop_assert!((c.e_test - (p.h * c.e_score + c.e_test_star)).abs() < 1e-12);
        }
        prop_assert!(c.e_test.is_finite() && c.e_train.is_finite());
    }

    #[test]
    fn stieltjes_is_positive_and_decreasing_in_shift(z in -10.0f64..-1e-3, c in 0.05f64..10.0) {
        let s = mp_stieltjes(z, c).unwrap();
        prop_assert!(s > 0.0 && s < 1.0 / -z + 1e-12);
        prop_assert!(mp_stieltjes(z - 0.1, c).unwrap() < s);
    }
}

// Each MMSE evaluation runs the full replica quadrature, so fewer cases.
proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn mmse_is_a_fraction(eta in 0.01f64..20.0, psi_d in 0.1f64..2.0) {
        let m = mmse_eta(eta, psi_d, &ActivationProfile::identity()).unwrap().mmse;
        prop_assert!((-1e-9..=1.0 + 1e-9).contains(&m));
    }

    #[test]
    fn mmse_decreases_with_snr(eta in 0.05f64..5.0, factor in 1.05f64..3.0, psi_d in 0.2f64..1.0) {
        let sigma = ActivationProfile::parse("hermite:[0.975,0.223]").unwrap();
        let lo = mmse_eta(eta, psi_d, &sigma).unwrap().mmse;
        let hi = mmse_eta(eta * factor, psi_d, &sigma).unwrap().mmse;
        prop_assert!(hi <= lo + 1e-6);
    }
}

#[test]
fn identity_and_unit_hermite_sigma_are_interchangeable() {
    let id =
        ModelPoint::new(0.3, 1e-3, 0.5, 5.0, 3.0, ActivationProfile::relu(), ActivationProfile::identity()).unwrap();
    let he = ModelPoint::new(
        0.3,
        1e-3,
        0.5,
        5.0,
        3.0,
        ActivationProfile::relu(),
        ActivationProfile::parse("hermite:[1]").unwrap(),
    )
    .unwrap();
    let (a, b) = (solve_zetas(&id, 0.0, -1e-3).unwrap(), solve_zetas(&he, 0.0, -1e-3).unwrap());
    assert_eq!(a.as_array(), b.as_array());
}
