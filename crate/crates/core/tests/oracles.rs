//! Independent oracles: dense eigen/LU solves from nalgebra against the
//! closed forms and the crate's own Cholesky-based linear algebra.

use approx::assert_relative_eq;
use dsm_curves::curves::{exact_test_error_linear, mp_stieltjes};
use dsm_curves::sim::linalg::{matmul_nt, Mat};
use dsm_curves::sim::rng::Purpose;
use dsm_curves::sim::{self, exact_score_linear, feature_moments, NoiseAverage, RidgeFit};
use dsm_curves::{ActivationProfile, ModelPoint};
use nalgebra::{DMatrix, DVector};

fn to_na(m: &Mat) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

/// Eigenvalues of MMᵀ/D for a standard normal d×D matrix.
fn sample_spectrum(d: usize, big_d: usize, seed: u64) -> Vec<f64> {
    let m = sim::gaussian_rows(seed, Purpose::Manifold, 0, d, big_d);
    let s = to_na(&m) * to_na(&m).transpose() / big_d as f64;
    s.symmetric_eigenvalues().iter().copied().collect()
}

#[test]
fn mp_stieltjes_matches_sample_eigenvalues() {
    let d = 400;
    for &psi_d in &[0.25, 0.5, 2.0] {
        let big_d = (psi_d * d as f64) as usize;
        let eig = sample_spectrum(d, big_d, 3);
        for &z in &[-0.05, -0.3, -1.5] {
            let empirical = eig.iter().map(|l| 1.0 / (l - z)).sum::<f64>() / d as f64;
            let closed = mp_stieltjes(z, 1.0 / psi_d).unwrap();
            let tol = 0.02 * closed;
            assert!((empirical - closed).abs() < tol, "psi_d={psi_d} z={z}: {empirical} vs {closed}");
        }
    }
}

#[test]
fn linear_exact_error_matches_finite_covariance() {
    // Optimal DSM error of Gaussian data with covariance a²MMᵀ/D + hI is
    // 1 − (h/d) tr Σ⁻¹.
    let d = 600;
    for &(t, psi_d) in &[(0.1, 0.5), (0.5, 0.25), (0.01, 1.0)] {
        let big_d = (psi_d * d as f64) as usize;
        let p = ModelPoint::new(t, 1e-3, psi_d, 1.0, 1.0, ActivationProfile::relu(), ActivationProfile::identity())
            .unwrap();
        let eig = sample_spectrum(d, big_d, 11);
        let oracle = 1.0 - p.h * eig.iter().map(|l| 1.0 / (p.a * p.a * l + p.h)).sum::<f64>() / d as f64;
        let closed = exact_test_error_linear(&p).unwrap();
        assert!((oracle - closed).abs() < 5e-3, "t={t} psi_d={psi_d}: {oracle} vs {closed}");
    }
}

#[test]
fn exact_linear_score_matches_dense_solve() {
    let (d, big_d, t) = (40, 25, 0.3f64);
    let m = sim::gaussian_rows(5, Purpose::Manifold, 0, d, big_d);
    let x = sim::gaussian_rows(6, Purpose::Latent, 0, 1, d).data;
    let a: f64 = (-t).exp();
    let h = 1.0 - a * a;
    let sigma = to_na(&m) * to_na(&m).transpose() * (a * a / big_d as f64) + DMatrix::identity(d, d) * h;
    let oracle = sigma.lu().solve(&(-DVector::from_vec(x.clone()))).unwrap();
    let got = exact_score_linear(&x, &m, t, &ActivationProfile::identity()).unwrap();
    for (g, o) in got.iter().zip(oracle.iter()) {
        assert_relative_eq!(*g, *o, epsilon = 1e-12, max_relative = 1e-10);
    }
}

#[test]
fn exact_score_without_manifold_is_isotropic() {
    let (d, t) = (12, 0.7);
    let m = Mat::zeros(d, 4);
    let x: Vec<f64> = (0..d).map(|i| i as f64 - 5.5).collect();
    let h = 1.0 - (-2.0f64 * t).exp();
    let got = exact_score_linear(&x, &m, t, &ActivationProfile::identity()).unwrap();
    for (g, xi) in got.iter().zip(&x) {
        assert_relative_eq!(*g, -xi / h, max_relative = 1e-12);
    }
}

/// Small fitted problem shared by the ridge tests.
fn small_fit(lambda: f64) -> (Mat, Mat, RidgeFit) {
    let (d, n, p) = (20, 60, 30);
    let w = sim::gaussian_rows(1, Purpose::Features, 0, p, d);
    let x = sim::gaussian_rows(1, Purpose::Latent, 0, n, d);
    let fm = feature_moments(&w, &x, 0.2, &ActivationProfile::relu(), NoiseAverage::Exact { order: 3 }, 1).unwrap();
    let h = 1.0 - (-0.4f64).exp();
    let fit = RidgeFit::new(fm.u.clone(), &fm.v, lambda, h).unwrap();
    (fm.u, fm.v, fit)
}

#[test]
fn nested_readouts_match_dense_solves() {
    let lambda = 1e-2;
    let (u, v, fit) = small_fit(lambda);
    let (un, vn) = (to_na(&u), to_na(&v));
    for q in [1, 7, 18, 30] {
        let uq = un.view((0, 0), (q, q)) + DMatrix::identity(q, q) * lambda;
        let oracle = uq.lu().solve(&vn.rows(0, q).into_owned()).unwrap();
        let b = fit.readout(q);
        for (g, o) in b.data.iter().zip(oracle.transpose().iter()) {
            assert!((g - o).abs() <= 1e-9 * (1.0 + o.abs()), "q={q}: {g} vs {o}");
        }
    }
}

/// Regularized DSM objective with the exact noise average.
fn objective(u: &DMatrix<f64>, v: &DMatrix<f64>, b: &DMatrix<f64>, lambda: f64) -> f64 {
    let d = v.ncols() as f64;
    1.0 - 2.0 * (b.transpose() * v).trace() / d + (b.transpose() * u * b).trace() / d + lambda * b.norm_squared() / d
}

#[test]
fn closed_form_train_error_and_local_minimality() {
    let lambda = 1e-2;
    let (u, v, fit) = small_fit(lambda);
    let (un, vn) = (to_na(&u), to_na(&v));
    let b = fit.readout(fit.p_max());
    let bn = to_na(&b);
    let direct = objective(&un, &vn, &bn, lambda) - lambda * bn.norm_squared() / vn.ncols() as f64;
    assert_relative_eq!(fit.train_error_closed_form(fit.p_max(), &b), direct, max_relative = 1e-10);

    let base = objective(&un, &vn, &bn, lambda);
    for k in 0..5 {
        let dir = to_na(&sim::gaussian_rows(100 + k, Purpose::FitNoise, 0, b.rows, b.cols));
        for eps in [1e-3, -1e-3, 1e-1] {
            assert!(objective(&un, &vn, &(&bn + &dir * eps), lambda) > base);
        }
    }
}

#[test]
fn huge_ridge_gives_null_readout() {
    let (_, _, fit) = small_fit(1e12);
    let b = fit.readout(fit.p_max());
    assert!(b.frobenius_sq() < 1e-20);
    assert_relative_eq!(fit.train_error_closed_form(fit.p_max(), &b), 1.0, epsilon = 1e-10);
}

#[test]
fn cholesky_resolvent_matches_eigen_trace() {
    let (d, big_d, z) = (80, 50, -0.4);
    let m = sim::gaussian_rows(9, Purpose::Manifold, 0, d, big_d);
    let mut s = matmul_nt(&m, &m);
    s.data.iter_mut().for_each(|v| *v /= big_d as f64);
    let eig = to_na(&s).symmetric_eigenvalues();
    let oracle = eig.iter().map(|l| 1.0 / (l - z)).sum::<f64>();
    for i in 0..d {
        s.data[i * d + i] -= z;
    }
    dsm_curves::sim::linalg::cholesky_in_place(&mut s).unwrap();
    let mut inv = Mat::identity(d);
    dsm_curves::sim::linalg::forward_solve(&s, d, &mut inv);
    assert_relative_eq!(inv.frobenius_sq(), oracle, max_relative = 1e-10);
}
