//! Cross-module invariant suite. Each check runs at full scale (the
//! acceptance settings) or at a reduced quick scale for smoke testing.

use std::time::Instant;

use dsm_curves::curves::{self, CurvePoint};
use dsm_curves::glm;
use dsm_curves::sim::linalg::{cholesky_in_place, forward_solve, matmul_nt, Mat};
use dsm_curves::sim::rng::Purpose;
use dsm_curves::sim::{self, GapDraw, NoiseAverage, SimConfig};
use dsm_curves::solver::{default_init, k_derivatives, solve_zetas, solve_zetas_from};
use dsm_curves::{ActivationProfile, ModelPoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::SweepConfig;
use crate::sweep::{self, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Quick,
    Full,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub summary: String,
    pub details: Vec<String>,
    pub seconds: f64,
}

impl CheckOutcome {
    /// One-line status.
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<32} {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.summary,
            self.seconds
        )
    }
}

type Body = Result<(bool, String, Vec<String>), String>;

fn timed(id: u32, name: &'static str, f: impl FnOnce() -> Body) -> CheckOutcome {
    let start = Instant::now();
    let (passed, summary, details) = match f() {
        Ok(x) => x,
        Err(e) => (false, format!("error: {e}"), Vec::new()),
    };
    CheckOutcome { id, name, passed, summary, details, seconds: start.elapsed().as_secs_f64() }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Feature activation, manifold fold and sizes of the theory-vs-simulation check.
fn fig4_settings(scale: Scale) -> (usize, Vec<u64>, Vec<f64>) {
    let psi_p = vec![0.5, 1.0, 2.0, 5.0, 10.0];
    match scale {
        Scale::Full => (1000, vec![1, 2, 3, 4, 5], psi_p),
        Scale::Quick => (200, vec![1, 2], psi_p),
    }
}

const FIG4_T: [f64; 2] = [0.1, 0.5];

fn fig4_point(t: f64, psi_p: f64) -> dsm_curves::Result<ModelPoint> {
    ModelPoint::new(t, 1e-4, 0.5, 10.0, psi_p, ActivationProfile::relu(), ActivationProfile::tanh())
}

/// Asymptotic test/train errors against finite-size simulation means.
pub fn theory_vs_simulation(scale: Scale) -> CheckOutcome {
    timed(1, "theory vs simulation", || {
        let (d, seeds, psi_p) = fig4_settings(scale);
        // 0.03 at d = 1000; the quick scale widens it by the 1/sqrt(d) finite-size rate.
        let tol = 0.03 * (1000.0 / d as f64).sqrt().max(1.0);
        let mut worst: f64 = 0.0;
        let mut details = Vec::new();
        for &t in &FIG4_T {
            let mut cfg = SimConfig::from_ratios(
                d,
                0.5,
                10.0,
                &psi_p,
                t,
                1e-4,
                ActivationProfile::relu(),
                ActivationProfile::tanh(),
            );
            cfg.noise = NoiseAverage::Exact { order: 3 };
            let res = sim::simulate(&cfg, &seeds).map_err(s)?;
            for (r, &pp) in res.iter().zip(&psi_p) {
                let c = CurvePoint::compute(&fig4_point(t, pp).map_err(s)?).map_err(s)?;
                let dt = (c.e_test - r.e_test.mean).abs();
                let dr = (c.e_train - r.e_train.mean).abs();
                worst = worst.max(dt).max(dr);
                details.push(format!(
                    "t={t} psi_p={pp}: test {:.4} vs {:.4}±{:.4}, train {:.4} vs {:.4}±{:.4}",
                    c.e_test, r.e_test.mean, r.e_test.se, c.e_train, r.e_train.mean, r.e_train.se
                ));
            }
        }
        let summary = format!("max |theory - MC| = {worst:.4} (tol {tol:.3}, d={d}, {} seeds)", seeds.len());
        Ok((worst <= tol, summary, details))
    })
}

/// Exact-score baseline: replica (GLM) route against the Marchenko–Pastur route.
pub fn glm_vs_mp(scale: Scale) -> CheckOutcome {
    timed(2, "GLM vs MP exact-score baseline", || {
        let (ts, ds): (&[f64], &[f64]) = match scale {
            Scale::Full => (&[0.01, 0.1, 0.5], &[0.25, 0.5, 1.0]),
            Scale::Quick => (&[0.1], &[0.5]),
        };
        let tol = 1e-3;
        let mut worst: f64 = 0.0;
        let mut details = Vec::new();
        for &t in ts {
            for &psi_d in ds {
                let id = ActivationProfile::identity();
                let p = ModelPoint::new(t, 1e-4, psi_d, 10.0, 2.0, ActivationProfile::relu(), id).map_err(s)?;
                let g = curves::exact_test_error_glm(&p).map_err(s)?;
                let m = curves::exact_test_error_linear(&p).map_err(s)?;
                worst = worst.max((g - m).abs());
                details.push(format!("t={t} psi_d={psi_d}: glm {g:.10} mp {m:.10}"));
            }
        }
        Ok((worst <= tol, format!("max |glm - mp| = {worst:.2e} (tol {tol:.0e})"), details))
    })
}

/// Settings of the empirical score-error decomposition check.
fn lemma4_config(scale: Scale) -> (SimConfig, Vec<u64>) {
    let d = match scale {
        Scale::Full => 2000,
        Scale::Quick => 400,
    };
    let mut cfg = SimConfig::from_ratios(
        d,
        0.5,
        10.0,
        &[2.0],
        0.1,
        1e-4,
        ActivationProfile::relu(),
        ActivationProfile::identity(),
    );
    cfg.score = true;
    (cfg, vec![1, 2, 3])
}

/// `e_test ≈ h·e_score + e*` on simulated data with a linear manifold.
pub fn score_decomposition(scale: Scale) -> CheckOutcome {
    timed(3, "empirical score decomposition", || {
        let (cfg, seeds) = lemma4_config(scale);
        let res = sim::simulate(&cfg, &seeds).map_err(s)?;
        let r = &res[0];
        let h = cfg.h();
        let mut diff = 0.0;
        let mut var = 0.0;
        let mut details = Vec::new();
        for (seed, sp) in seeds.iter().zip(&r.per_seed) {
            let sc = sp.score.ok_or("score estimate missing")?;
            let dseed = sp.e_test.mean - sc.decomposition.mean;
            let v = sp.e_test.se.powi(2) + sc.decomposition.se.powi(2);
            diff += dseed;
            var += v;
            details.push(format!(
                "seed {seed}: e_test {:.5}±{:.5}, h e_score + e* = {:.5}±{:.5} (e_score {:.5}, e* {:.5})",
                sp.e_test.mean,
                sp.e_test.se,
                sc.decomposition.mean,
                sc.decomposition.se,
                sc.e_score.mean,
                sc.e_star.mean
            ));
        }
        let k = seeds.len() as f64;
        let (diff, se) = (diff / k, var.sqrt() / k);
        let summary = format!(
            "|e_test - (h e_score + e*)| = {:.2e}, 2 SE = {:.2e} (d={}, h={h:.4})",
            diff.abs(),
            2.0 * se,
            cfg.d
        );
        Ok((diff.abs() <= 2.0 * se, summary, details))
    })
}

/// Residuals and derivative agreement on the points of the theory checks,
/// plus random restarts on a reference point.
pub fn solver_integrity(scale: Scale) -> CheckOutcome {
    timed(4, "solver integrity", || {
        let (_, _, psi_p) = fig4_settings(scale);
        let mut points = Vec::new();
        for &t in &FIG4_T {
            for &pp in &psi_p {
                points.push(fig4_point(t, pp).map_err(s)?);
            }
        }
        let (c3, _) = lemma4_config(scale);
        points.push(ModelPoint::new(c3.t, c3.lambda, 0.5, 10.0, 2.0, c3.rho.clone(), c3.sigma.clone()).map_err(s)?);
        let mut worst_res: f64 = 0.0;
        let mut worst_agree: f64 = 0.0;
        for p in &points {
            let kd = k_derivatives(p).map_err(s)?;
            worst_res = worst_res.max(kd.residual);
            worst_agree = worst_agree.max(kd.agreement);
        }
        let reference = fig4_point(0.1, 2.0).map_err(s)?;
        let lam = reference.lambda;
        let base = solve_zetas(&reference, 0.0, -lam).map_err(s)?.as_array();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst_restart: f64 = 0.0;
        let init = default_init(&reference);
        for _ in 0..10 {
            let start = init.map(|v| v * rng.random_range(0.5..2.0));
            let z = solve_zetas_from(&reference, 0.0, -lam, start).map_err(s)?.as_array();
            for (a, b) in z.iter().zip(&base) {
                worst_restart = worst_restart.max((a - b).abs() / b.abs().max(1.0));
            }
        }
        let passed = worst_res < 1e-10 && worst_agree <= 1e-4 && worst_restart <= 1e-8;
        let summary = format!(
            "max residual {worst_res:.1e} (<1e-10), step agreement {worst_agree:.1e} (<=1e-4), restart spread {worst_restart:.1e} (<=1e-8)"
        );
        Ok((passed, summary, vec![format!("{} solved points", points.len())]))
    })
}

/// `(1/d) tr (S − zI)⁻¹` for `S = MMᵀ/D`, via a Cholesky factor: `tr A⁻¹ = ‖L⁻¹‖²_F`.
pub fn resolvent_trace(m: &Mat, z: f64) -> dsm_curves::Result<f64> {
    let d = m.rows;
    let mut a = matmul_nt(m, m);
    let c = 1.0 / m.cols as f64;
    a.data.iter_mut().for_each(|v| *v *= c);
    for i in 0..d {
        a.data[i * d + i] -= z;
    }
    cholesky_in_place(&mut a)?;
    let mut inv = Mat::identity(d);
    forward_solve(&a, d, &mut inv);
    Ok(inv.frobenius_sq() / d as f64)
}

/// Closed-form Marchenko–Pastur Stieltjes transform against a sampled resolvent trace.
pub fn mp_oracle(scale: Scale) -> CheckOutcome {
    timed(5, "MP Stieltjes oracle", || {
        let d = match scale {
            Scale::Full => 2000,
            Scale::Quick => 400,
        };
        let tol = 1e-2;
        let mut worst: f64 = 0.0;
        let mut details = Vec::new();
        for (k, &psi_d) in [0.25, 0.5, 1.0].iter().enumerate() {
            let big_d = (psi_d * d as f64).round() as usize;
            let m = sim::gaussian_rows(50 + k as u64, Purpose::Manifold, 0, d, big_d);
            for &z in &[-0.1, -0.5, -2.0] {
                let oracle = resolvent_trace(&m, z).map_err(s)?;
                let closed = curves::mp_stieltjes(z, 1.0 / psi_d).map_err(s)?;
                worst = worst.max((oracle - closed).abs());
                details.push(format!("psi_d={psi_d} z={z}: closed {closed:.6} trace {oracle:.6}"));
            }
        }
        Ok((worst <= tol, format!("max |closed - trace| = {worst:.2e} (tol {tol:.0e}, d={d})"), details))
    })
}

/// Replica-formula building blocks against independent quadratures.
pub fn glm_quadrature(_scale: Scale) -> CheckOutcome {
    timed(6, "GLM quadrature oracles", || {
        let mut worst_phi: f64 = 0.0;
        let mut details = Vec::new();
        for r in [0.5, 1.0, 2.0, 5.0] {
            let (a, b) = (glm::phi_r(r), glm::phi_r_integral(r));
            worst_phi = worst_phi.max((a - b).abs());
            details.push(format!("phi({r}) = {a:.12} vs {b:.12}"));
        }
        let id = ActivationProfile::identity();
        let mut worst_psi: f64 = 0.0;
        for t in [0.05f64, 0.5] {
            let a = (-t).exp();
            let h = 1.0 - a * a;
            for q in [0.0, 0.3, 0.7, 0.99] {
                let quad = glm::psi_q(q, t, &id).map_err(s)?;
                let closed = glm::psi_q_linear(q, a, h);
                worst_psi = worst_psi.max((quad - closed).abs());
                details.push(format!("Psi(q={q}, t={t}) = {quad:.10} vs {closed:.10}"));
            }
        }
        let passed = worst_phi <= 1e-8 && worst_psi <= 1e-7;
        Ok((passed, format!("phi err {worst_phi:.1e} (tol 1e-8), Psi err {worst_psi:.1e} (tol 1e-7)"), details))
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Gaussian-equivalence gap shrinks like 1/d: median gap(2d)/gap(d) in [0.3, 0.8].
pub fn gap_scaling(scale: Scale) -> CheckOutcome {
    timed(7, "Gaussian-equivalence gap scaling", || {
        let (dims, draws, n_mc): (&[usize], u64, usize) = match scale {
            Scale::Full => (&[500, 1000, 2000], 20, 200_000),
            Scale::Quick => (&[100, 200, 400], 8, 20_000),
        };
        let f = ActivationProfile::parse("hermite:[0,1]").map_err(s)?;
        let sigma = ActivationProfile::parse("hermite:[0.975,0.223]").map_err(s)?;
        let mut mc = vec![Vec::new(); dims.len()];
        let mut exact = vec![Vec::new(); dims.len()];
        let mut max_z: f64 = 0.0;
        for (i, &d) in dims.iter().enumerate() {
            for k in 0..draws {
                let seed = 7000 + k;
                let draw = GapDraw::new(d, d / 2, seed);
                let g = sim::gap_for_draw(&f, &draw, &sigma, n_mc, seed).map_err(s)?;
                let e = sim::gaussian_equivalence_gap_exact(&f, &draw, &sigma).map_err(s)?;
                max_z = max_z.max((g.signed - e.signed).abs() / g.se);
                mc[i].push(g.gap);
                exact[i].push(e.gap);
            }
        }
        let mut passed = true;
        let mut parts = Vec::new();
        let mut details = Vec::new();
        for i in 0..dims.len() - 1 {
            let ratio = |v: &[Vec<f64>]| median(v[i + 1].iter().zip(&v[i]).map(|(b, a)| b / a).collect());
            let (rm, re) = (ratio(&mc), ratio(&exact));
            passed &= (0.3..=0.8).contains(&rm);
            parts.push(format!("{}->{}: {rm:.3}", dims[i], dims[i + 1]));
            details.push(format!(
                "d {}->{}: median ratio MC {rm:.4}, exact cumulant oracle {re:.4}; median gaps {:.3e} -> {:.3e}",
                dims[i],
                dims[i + 1],
                median(mc[i].clone()),
                median(mc[i + 1].clone())
            ));
        }
        details.push(format!("largest |MC - exact| / SE over all draws: {max_z:.2}"));
        Ok((passed, format!("median ratios {} (in [0.3, 0.8], {draws} draws, n_mc={n_mc})", parts.join(", ")), details))
    })
}

/// Degenerate limits of the curves and normalization of the kernel maps.
pub fn degenerate_limits(_scale: Scale) -> CheckOutcome {
    timed(8, "degenerate limits", || {
        let mut worst: f64 = 0.0;
        let mut details = Vec::new();
        let pairs = [
            (ActivationProfile::relu(), ActivationProfile::identity()),
            (ActivationProfile::relu(), ActivationProfile::tanh()),
        ];
        for (rho, sigma) in &pairs {
            for (t, lambda, label) in [(1e-6, 1e-4, "t=1e-6"), (0.1, 1e8, "lambda=1e8")] {
                let p = ModelPoint::new(t, lambda, 0.5, 10.0, 2.0, rho.clone(), sigma.clone()).map_err(s)?;
                let te = curves::test_error(&p).map_err(s)?;
                let tr = curves::train_error(&p).map_err(s)?;
                worst = worst.max((te - 1.0).abs()).max((tr - 1.0).abs());
                details.push(format!("{label} rho={} sigma={}: test {te:.8} train {tr:.8}", rho.kind(), sigma.kind()));
            }
        }
        for sigma in [ActivationProfile::identity(), ActivationProfile::parse("hermite:[0.975,0.223]").map_err(s)?] {
            let m = glm::mmse_eta(1e-3, 0.5, &sigma).map_err(s)?.mmse;
            worst = worst.max((m - 1.0).abs());
            details.push(format!("eta=1e-3 sigma={}: mmse {m:.8}", sigma.kind()));
        }
        let curve_ok = worst <= 1e-4;
        let mut worst_c: f64 = 0.0;
        for p in [ActivationProfile::relu(), ActivationProfile::tanh(), ActivationProfile::identity()] {
            worst_c = worst_c.max(p.c_gamma(0.0).abs()).max((p.c_gamma(1.0) - 1.0).abs());
        }
        let passed = curve_ok && worst_c <= 1e-6;
        Ok((
            passed,
            format!("max limit error {worst:.1e} (tol 1e-4), kernel c(0), c(1) error {worst_c:.1e} (tol 1e-6)"),
            details,
        ))
    })
}

/// Coefficient of determination of a least-squares line.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Sample complexity grows linearly with ψ_D.
pub fn sample_complexity_linearity(scale: Scale) -> CheckOutcome {
    timed(9, "sample-complexity linearity", || {
        let count = match scale {
            Scale::Full => 161,
            Scale::Quick => 41,
        };
        let grid = crate::config::parse_grid(0, &format!("log(0.1, 1000, {count})")).map_err(s)?;
        let ds = [0.1, 0.2, 0.3, 0.4, 0.5];
        let mut star = Vec::new();
        let mut details = Vec::new();
        for &psi_d in &ds {
            let base = ModelPoint::new(
                0.1,
                1e-4,
                psi_d,
                1.0,
                1000.0,
                ActivationProfile::relu(),
                ActivationProfile::identity(),
            )
            .map_err(s)?;
            let sc = curves::sample_complexity(&base, 0.2, &[0.1], &grid).map_err(s)?;
            let v = sc.psi_n.ok_or_else(|| format!("no psi_n on the grid meets epsilon at psi_d={psi_d}"))?;
            details.push(format!("psi_d={psi_d}: psi_n* = {v:.4} (stable: {})", sc.stable));
            star.push(v);
        }
        let r2 = r_squared(&ds, &star);
        Ok((r2 >= 0.9, format!("R^2 = {r2:.4} (>= 0.9), psi_n* = {star:.3?}"), details))
    })
}

/// Simulate-mode CSV bodies are byte-identical across reruns and worker counts.
pub fn determinism(_scale: Scale) -> CheckOutcome {
    timed(10, "determinism", || {
        let configs = [
            "mode = simulate\nrho = relu\nsigma = identity\nt = 0.1\npsi_d = 0.5\npsi_n = 4\nsweep = psi_p\ngrid = [0.5, 2]\nd = 96\nseeds = [3, 4]\nn_test = 300\nn_mc_score = 300\nscore = true\n",
            "mode = simulate\nrho = tanh\nsigma = tanh\nt = 0.5\npsi_d = 0.5\npsi_p = 1.5\nsweep = psi_n\ngrid = [1, 3]\nd = 80\nseeds = [9]\nnoise = sampled\nn_z = 3\nn_test = 300\n",
        ];
        let dir = std::env::temp_dir().join(format!("curves-determinism-{}", std::process::id()));
        std::fs::create_dir_all(&dir).map_err(s)?;
        let mut details = Vec::new();
        let mut passed = true;
        for (k, text) in configs.iter().enumerate() {
            let cfg = SweepConfig::parse(text).map_err(s)?;
            let mut bodies = Vec::new();
            for (run, jobs) in [1usize, 4, 1].iter().enumerate() {
                let out = dir.join(format!("c{k}-r{run}.csv"));
                let opts = RunOptions { jobs: *jobs, out: out.clone(), mem_budget: sim::DEFAULT_MEM_BUDGET };
                let summary = sweep::run(&cfg, &opts).map_err(s)?;
                if !summary.errors.is_empty() {
                    return Err(format!("config {k} had failing points: {:?}", summary.errors));
                }
                bodies.push(std::fs::read(&out).map_err(s)?);
            }
            let same = bodies.windows(2).all(|w| w[0] == w[1]);
            passed &= same;
            details.push(format!("config {k}: {} bytes, identical across jobs 1/4/1: {same}", bodies[0].len()));
        }
        let _ = std::fs::remove_dir_all(&dir);
        Ok((passed, "simulate CSV bodies identical across reruns and worker counts".to_string(), details))
    })
}

/// Every check in order.
pub fn run_all(scale: Scale, mut report: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let checks: [fn(Scale) -> CheckOutcome; 10] = [
        theory_vs_simulation,
        glm_vs_mp,
        score_decomposition,
        solver_integrity,
        mp_oracle,
        glm_quadrature,
        gap_scaling,
        degenerate_limits,
        sample_complexity_linearity,
        determinism,
    ];
    checks
        .iter()
        .map(|c| {
            let o = c(scale);
            report(&o);
            o
        })
        .collect()
}
