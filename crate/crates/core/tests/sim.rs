//! Finite-size simulator: moments, determinism, theory agreement, the
//! empirical optimal score and the Gaussian-equivalence gap.

use dsm_curves::curves::CurvePoint;
use dsm_curves::sim::linalg::Mat;
use dsm_curves::sim::rng::Purpose;
use dsm_curves::sim::{
    self, empirical_optimal_score, feature_moments, gap_for_draw, gaussian_equivalence_gap_exact, simulate,
    simulate_seed, GapDraw, NoiseAverage, SimConfig,
};
use dsm_curves::{ActivationProfile, ModelPoint};

fn small_cfg(noise: NoiseAverage) -> SimConfig {
    let mut c = SimConfig::from_ratios(
        40,
        0.5,
        3.0,
        &[0.5, 1.0, 2.0],
        0.2,
        1e-3,
        ActivationProfile::relu(),
        ActivationProfile::identity(),
    );
    c.noise = noise;
    c.n_test = 700;
    c.n_mc_score = 600;
    c.score = true;
    c.seed = 4;
    c
}

#[test]
fn identity_features_give_exact_cross_moment() {
    // ϱ = identity: E_z ϱ(w·x_t/√d) z = √h w/√d for every datum.
    let (d, n, p, t) = (16, 10, 8, 0.3);
    let w = sim::gaussian_rows(2, Purpose::Features, 0, p, d);
    let x = sim::gaussian_rows(2, Purpose::Latent, 0, n, d);
    let fm = feature_moments(&w, &x, t, &ActivationProfile::identity(), NoiseAverage::Exact { order: 3 }, 2).unwrap();
    let sh = (1.0 - (-2.0f64 * t).exp()).sqrt();
    for (v, wv) in fm.v.data.iter().zip(&w.data) {
        assert!((v - sh * wv / (d as f64).sqrt()).abs() < 1e-12);
    }
    for i in 0..p {
        for j in 0..p {
            assert!((fm.u.get(i, j) - fm.u.get(j, i)).abs() < 1e-12);
        }
    }
}

#[test]
fn sampled_moments_converge_to_exact() {
    let (d, n, p, t) = (12, 40, 6, 0.5);
    let w = sim::gaussian_rows(3, Purpose::Features, 0, p, d);
    let x = sim::gaussian_rows(3, Purpose::Latent, 0, n, d);
    let rho = ActivationProfile::tanh();
    let exact = feature_moments(&w, &x, t, &rho, NoiseAverage::Exact { order: 12 }, 3).unwrap();
    let sampled = feature_moments(&w, &x, t, &rho, NoiseAverage::Sampled { draws: 4000 }, 3).unwrap();
    let max_diff = |a: &Mat, b: &Mat| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    // MC error of an average over n·draws = 1.6e5 unit-scale terms.
    assert!(max_diff(&exact.u, &sampled.u) < 0.01, "U: {}", max_diff(&exact.u, &sampled.u));
    assert!(max_diff(&exact.v, &sampled.v) < 0.01, "V: {}", max_diff(&exact.v, &sampled.v));
}

#[test]
fn results_are_bitwise_identical_across_thread_counts() {
    for noise in [NoiseAverage::Exact { order: 3 }, NoiseAverage::Sampled { draws: 3 }] {
        let cfg = small_cfg(noise);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| simulate_seed(&cfg).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one, run(1));
    }
}

#[test]
fn train_is_below_test_and_errors_are_nonnegative() {
    let cfg = small_cfg(NoiseAverage::Sampled { draws: 4 });
    for r in simulate(&cfg, &[1, 2, 3]).unwrap() {
        let se = (r.e_test.se.powi(2) + r.e_train.se.powi(2)).sqrt();
        assert!(r.e_train.mean <= r.e_test.mean + 2.0 * se, "p={}: {:?} {:?}", r.p, r.e_train, r.e_test);
        assert!(r.e_test.mean >= 0.0 && r.e_score.unwrap().mean >= 0.0);
    }
}

#[test]
fn score_decomposition_holds_per_draw_on_average() {
    let cfg = small_cfg(NoiseAverage::Exact { order: 3 });
    for pt in simulate_seed(&cfg).unwrap() {
        let s = pt.score.unwrap();
        let h = cfg.h();
        // Same draws feed both sides, so only the cross term separates them.
        let combined = (s.e_test.se.powi(2) + s.decomposition.se.powi(2)).sqrt();
        assert!((s.e_test.mean - s.decomposition.mean).abs() < 4.0 * combined + 1e-12);
        assert!((s.decomposition.mean - (h * s.e_score.mean + s.e_star.mean)).abs() < 1e-12);
    }
}

#[test]
fn simulation_approaches_theory_as_d_grows() {
    // Small-ψ_p point of the fig4 config; the deviation should shrink with d.
    let (t, psi_p) = (0.5, 1.0);
    let theory = CurvePoint::compute(
        &ModelPoint::new(t, 1e-4, 0.5, 10.0, psi_p, ActivationProfile::relu(), ActivationProfile::tanh()).unwrap(),
    )
    .unwrap();
    let dev = |d: usize| {
        let mut cfg = SimConfig::from_ratios(
            d,
            0.5,
            10.0,
            &[psi_p],
            t,
            1e-4,
            ActivationProfile::relu(),
            ActivationProfile::tanh(),
        );
        cfg.n_test = 2000;
        let r = &simulate(&cfg, &[1, 2, 3]).unwrap()[0];
        (r.e_train.mean - theory.e_train).abs()
    };
    let (coarse, fine) = (dev(50), dev(200));
    assert!(fine < coarse, "deviation did not shrink: d=50 {coarse}, d=200 {fine}");
    assert!(fine < 0.01, "d=200 deviation {fine}");
}

#[test]
fn empirical_optimal_score_with_one_point_is_its_conditional_score() {
    let t: f64 = 0.4;
    let (a, h) = ((-t).exp(), 1.0 - (-2.0 * t).exp());
    let x = Mat::from_vec(1, 3, vec![1.0, -2.0, 0.5]);
    let xt = [0.3, 0.1, -0.7];
    let s = empirical_optimal_score(&xt, &x, t);
    for i in 0..3 {
        assert!((s[i] + (xt[i] - a * x.row(0)[i]) / h).abs() < 1e-14);
    }
}

#[test]
fn empirical_optimal_score_snaps_to_nearest_point_at_small_t() {
    let t: f64 = 1e-4;
    let a = (-t).exp();
    let h = 1.0 - a * a;
    let x = Mat::from_vec(3, 2, vec![0.0, 0.0, 5.0, 5.0, -5.0, 3.0]);
    // Slightly off the second datum: the softmax saturates on it without underflow.
    let xt = [5.0 * a + 1e-3, 5.0 * a];
    let s = empirical_optimal_score(&xt, &x, t);
    assert!((s[0] + 1e-3 / h).abs() < 1e-6 / h);
    assert!(s[1].abs() < 1e-6 / h);
    assert!(s.iter().all(|v| v.is_finite()));
}

#[test]
fn gap_vanishes_for_gaussian_data() {
    let f = ActivationProfile::parse("hermite:[0,1]").unwrap();
    let draw = GapDraw::new(80, 40, 3);
    let g = gap_for_draw(&f, &draw, &ActivationProfile::identity(), 4000, 1).unwrap();
    assert!(g.signed.abs() < 4.0 * g.se + 1e-10, "{g:?}");
}

#[test]
fn gap_estimate_matches_cumulant_oracle() {
    let f = ActivationProfile::parse("hermite:[0,1]").unwrap();
    let sigma = ActivationProfile::parse("hermite:[0.975,0.223]").unwrap();
    for seed in [1, 2] {
        let draw = GapDraw::new(60, 30, seed);
        let mc = gap_for_draw(&f, &draw, &sigma, 20000, seed).unwrap();
        let exact = gaussian_equivalence_gap_exact(&f, &draw, &sigma).unwrap();
        assert!((mc.signed - exact.signed).abs() < 4.0 * mc.se, "seed {seed}: {mc:?} vs {exact:?}");
        assert!((mc.gaussian - exact.gaussian).abs() < 1e-10);
    }
}

#[test]
fn gap_standard_error_shrinks_with_samples() {
    let f = ActivationProfile::parse("hermite:[0,1]").unwrap();
    let sigma = ActivationProfile::tanh();
    let draw = GapDraw::new(50, 25, 9);
    let small = gap_for_draw(&f, &draw, &sigma, 1000, 4).unwrap();
    let large = gap_for_draw(&f, &draw, &sigma, 16000, 4).unwrap();
    let ratio = large.se / small.se;
    assert!((0.15..0.4).contains(&ratio), "se ratio {ratio}, expected about 1/4");
}

#[test]
fn memory_guard_rejects_oversized_runs() {
    let mut cfg = small_cfg(NoiseAverage::Exact { order: 3 });
    cfg.mem_budget = 1024;
    assert!(matches!(cfg.validate(), Err(dsm_curves::Error::MemoryBudget { .. })));
}
