//! Finite-size Monte Carlo: hidden-manifold data, the ridge-optimal
//! random-feature score, and empirical errors.

pub mod gap;
pub mod linalg;
pub mod rng;
pub mod score;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationProfile;
use crate::error::{invalid, Error, Result};
use linalg::{
    backward_solve, bytes_for, cholesky_in_place, forward_solve, gemm, matmul_nt, pairwise_sum, Mat, View, BLOCK,
};
use rng::{normals_into, Purpose};

pub use gap::{gap_for_draw, gaussian_equivalence_gap, gaussian_equivalence_gap_exact, ExactGap, GapDraw, GapEstimate};
pub use score::{empirical_optimal_score, empirical_score_error, exact_score_linear, LinearExactScore, ScoreEstimate};

/// Default cap on the estimated working set.
pub const DEFAULT_MEM_BUDGET: u64 = 8 << 30;

/// Data rows processed per pass when accumulating feature moments.
const DATA_CHUNK: usize = 256;
/// Samples per pass when evaluating errors.
pub(crate) const EVAL_CHUNK: usize = 512;

/// How the expectation over the noise z in U and V is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseAverage {
    /// Average over `draws` fresh z per datum.
    Sampled { draws: usize },
    /// Closed-form Gaussian average: Mehler expansion of the off-diagonal
    /// entries up to `order`, exact diagonal and exact V.
    Exact { order: usize },
}

impl Default for NoiseAverage {
    fn default() -> Self {
        NoiseAverage::Exact { order: 3 }
    }
}

/// One simulation setting; `p` lists nested feature counts that share the
/// leading rows of W.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub d: usize,
    pub big_d: usize,
    pub n: usize,
    pub p: Vec<usize>,
    pub t: f64,
    pub lambda: f64,
    pub rho: ActivationProfile,
    pub sigma: ActivationProfile,
    pub noise: NoiseAverage,
    pub n_test: usize,
    pub n_mc_score: usize,
    pub seed: u64,
    pub mem_budget: u64,
    /// Also estimate the score error (linear σ only).
    pub score: bool,
}

impl SimConfig {
    /// Sizes from dimension ratios, rounded to the nearest integer.
    pub fn from_ratios(
        d: usize,
        psi_d: f64,
        psi_n: f64,
        psi_p: &[f64],
        t: f64,
        lambda: f64,
        rho: ActivationProfile,
        sigma: ActivationProfile,
    ) -> Self {
        let round = |r: f64| ((r * d as f64).round() as usize).max(1);
        Self {
            d,
            big_d: round(psi_d),
            n: round(psi_n),
            p: psi_p.iter().map(|&r| round(r)).collect(),
            t,
            lambda,
            rho,
            sigma,
            noise: NoiseAverage::default(),
            n_test: 4096,
            n_mc_score: 4096,
            seed: 0,
            mem_budget: DEFAULT_MEM_BUDGET,
            score: false,
        }
    }

    pub fn p_max(&self) -> usize {
        self.p.iter().copied().max().unwrap_or(0)
    }

    pub fn a(&self) -> f64 {
        (-self.t).exp()
    }

    pub fn h(&self) -> f64 {
        let a = self.a();
        1.0 - a * a
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("d", self.d), ("D", self.big_d), ("n", self.n), ("n_test", self.n_test), ("n_mc_score", self.n_mc_score)]
        {
            if v == 0 {
                return Err(invalid(name, "must be >= 1"));
            }
        }
        if self.p.is_empty() || self.p.contains(&0) {
            return Err(invalid("p", "needs at least one positive feature count"));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(invalid("t", format!("must be > 0, got {}", self.t)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be > 0, got {}", self.lambda)));
        }
        if let NoiseAverage::Sampled { draws: 0 } = self.noise {
            return Err(invalid("n_z", "must be >= 1"));
        }
        if self.score && !self.sigma.is_identity() {
            return Err(Error::Unsupported("empirical score error needs sigma = identity".into()));
        }
        let need = self.memory_estimate();
        if need > self.mem_budget {
            return Err(Error::MemoryBudget { need, budget: self.mem_budget });
        }
        Ok(())
    }

    /// Peak working set in bytes.
    pub fn memory_estimate(&self) -> u64 {
        let (d, p, n) = (self.d, self.p_max(), self.n);
        let threads = rayon::current_num_threads();
        let mut count = p * p // U, then its factor
            + 3 * p * d // W, V, Y
            + n * d + d * self.big_d + n * self.big_d // X, M, latent draws
            + self.p.iter().map(|&q| q * d).sum::<usize>() // readouts
            + p * EVAL_CHUNK + 2 * EVAL_CHUNK * d;
        match self.noise {
            NoiseAverage::Exact { order } => {
                count += p * p + (order + 1) * p * DATA_CHUNK + threads * BLOCK * p;
            }
            NoiseAverage::Sampled { draws } => {
                let cols = (DATA_CHUNK / draws).max(1) * draws;
                count += p * cols + 2 * cols * d;
            }
        }
        if self.score {
            count += d * d + 2 * d * EVAL_CHUNK;
        }
        bytes_for(count)
    }
}

/// Draws of one run: manifold M (d×D), data X (n×d, one datum per row) and
/// features W (p_max×d).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub m: Mat,
    pub x: Mat,
    pub w: Mat,
}

/// Standard normal matrix whose row r comes from stream `(purpose, start + r)`.
pub fn gaussian_rows(seed: u64, purpose: Purpose, start: usize, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    if cols > 0 {
        m.data.par_chunks_mut(cols).enumerate().for_each(|(r, row)| {
            normals_into(seed, purpose, (start + r) as u64, row);
        });
    }
    m
}

/// `σ(Ξ Mᵀ/√D)` for latent rows Ξ (k×D): one manifold point per row.
pub fn manifold_points(m: &Mat, xi: &Mat, sigma: &ActivationProfile) -> Mat {
    let mut x = matmul_nt(xi, m);
    let s = 1.0 / (m.cols as f64).sqrt();
    x.data.par_iter_mut().for_each(|v| *v = sigma.eval(*v * s));
    x
}

/// `ϱ(W Xᵀ/√d)`: features (p×k) of the inputs given one per row.
pub fn features(w: &Mat, inputs: &Mat, rho: &ActivationProfile) -> Mat {
    let mut f = matmul_nt(w, inputs);
    let s = 1.0 / (w.cols as f64).sqrt();
    f.data.par_iter_mut().for_each(|v| *v = rho.eval(*v * s));
    f
}

pub fn generate(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let m = gaussian_rows(cfg.seed, Purpose::Manifold, 0, cfg.d, cfg.big_d);
    Ok(generate_with_manifold(cfg, m))
}

/// Data and features for a caller-supplied manifold matrix.
pub fn generate_with_manifold(cfg: &SimConfig, m: Mat) -> Dataset {
    assert_eq!((m.rows, m.cols), (cfg.d, cfg.big_d), "manifold shape");
    let xi = gaussian_rows(cfg.seed, Purpose::Latent, 0, cfg.n, cfg.big_d);
    let x = manifold_points(&m, &xi, &cfg.sigma);
    let w = gaussian_rows(cfg.seed, Purpose::Features, 0, cfg.p_max(), cfg.d);
    Dataset { m, x, w }
}

/// Feature second moments `U = (1/n)Σ E_z ϱϱᵀ` (p×p) and `V = (1/n)Σ E_z ϱ zᵀ` (p×d).
#[derive(Debug, Clone)]
pub struct FeatureMoments {
    pub u: Mat,
    pub v: Mat,
}

pub fn feature_moments(
    w: &Mat,
    x: &Mat,
    t: f64,
    rho: &ActivationProfile,
    noise: NoiseAverage,
    seed: u64,
) -> Result<FeatureMoments> {
    assert_eq!(w.cols, x.cols, "W and X disagree on d");
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be > 0, got {t}")));
    }
    let a = (-t).exp();
    let h = 1.0 - a * a;
    match noise {
        NoiseAverage::Exact { order } => Ok(moments_exact(w, x, a, h, rho, order)),
        NoiseAverage::Sampled { draws } => {
            if draws == 0 {
                return Err(invalid("n_z", "must be >= 1"));
            }
            Ok(moments_sampled(w, x, a, h, rho, draws, seed))
        }
    }
}

/// Gaussian average over z. With `m = a wᵀx/√d`, `s = √h‖w‖/√d` and
/// `ρ = ŵ_jᵀŵ_k`, Mehler's formula gives
/// `E_z ϱ(u_j)ϱ(u_k) = Σ_ℓ ρ^ℓ α̃_ℓ(j)α̃_ℓ(k)` with normalized projections
/// `α̃_ℓ = E_u ϱ(m + s u) h_ℓ(u)`, and `E_z ϱ(u_j) z = α̃₁(j) ŵ_j`.
fn moments_exact(w: &Mat, x: &Mat, a: f64, h: f64, rho: &ActivationProfile, order: usize) -> FeatureMoments {
    let (p, d, n) = (w.rows, w.cols, x.rows);
    let terms = order + 1;
    let norms: Vec<f64> = (0..p).map(|j| w.row(j).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut w_hat = w.clone();
    w_hat.data.par_chunks_mut(d).zip(&norms).for_each(|(row, &nr)| row.iter_mut().for_each(|v| *v /= nr));
    let corr = matmul_nt(&w_hat, &w_hat);
    let s: Vec<f64> = norms.iter().map(|nr| h.sqrt() * nr / (d as f64).sqrt()).collect();
    let scale = a / (d as f64).sqrt();

    let mut u = Mat::zeros(p, p);
    let mut diag = vec![0.0; p];
    let mut first = vec![0.0; p];
    for start in (0..n).step_by(DATA_CHUNK) {
        let nc = DATA_CHUNK.min(n - start);
        let chunk = Mat::from_vec(nc, d, x.data[start * d..(start + nc) * d].to_vec());
        let g = matmul_nt(w, &chunk);
        // Row j holds α̃_ℓ(j, i) at ℓ·nc + i.
        let width = terms * nc;
        let mut proj = vec![0.0; p * width];
        proj.par_chunks_mut(width).zip(diag.par_iter_mut()).zip(first.par_iter_mut()).enumerate().for_each(
            |(j, ((row, dj), fj))| {
                let mut out = [0.0; 32];
                let mut heap = Vec::new();
                let buf: &mut [f64] = if terms <= out.len() {
                    &mut out[..terms]
                } else {
                    heap.resize(terms, 0.0);
                    &mut heap
                };
                let mut sq = 0.0;
                for i in 0..nc {
                    let mean = scale * g.get(j, i);
                    rho.gaussian_projection(mean, s[j], buf);
                    for (l, &b) in buf.iter().enumerate() {
                        row[l * nc + i] = b;
                    }
                    sq += rho.shifted_second_moment(mean, s[j]);
                    *fj += buf.get(1).copied().unwrap_or(0.0);
                }
                *dj += sq;
            },
        );
        let proj = &proj;
        let corr = &corr;
        u.data.par_chunks_mut(BLOCK * p).enumerate().for_each(|(blk, ublock)| {
            let r0 = blk * BLOCK;
            let rows = ublock.len() / p;
            let cols = r0 + rows;
            let mut acc = vec![0.0; rows * cols];
            for l in (0..terms).rev() {
                if l + 1 < terms {
                    for r in 0..rows {
                        let c_row = &corr.data[(r0 + r) * p..(r0 + r) * p + cols];
                        acc[r * cols..(r + 1) * cols].iter_mut().zip(c_row).for_each(|(v, c)| *v *= c);
                    }
                }
                let av = View { data: &proj[r0 * width + l * nc..], rs: width as isize, cs: 1 };
                let bv = View { data: &proj[l * nc..], rs: 1, cs: width as isize };
                let beta = if l + 1 == terms { 0.0 } else { 1.0 };
                linalg::gemm_strided(rows, nc, cols, av, bv, beta, &mut acc, cols);
            }
            for r in 0..rows {
                let dst = &mut ublock[r * p..r * p + cols];
                dst.iter_mut().zip(&acc[r * cols..(r + 1) * cols]).for_each(|(d, s)| *d += s);
            }
        });
    }
    let inv_n = 1.0 / n as f64;
    u.data.par_iter_mut().for_each(|v| *v *= inv_n);
    for j in 0..p {
        u.data[j * p + j] = diag[j] * inv_n;
    }
    u.symmetrize_from_lower();
    let mut v = w_hat;
    v.data.par_chunks_mut(d).zip(&first).for_each(|(row, &f)| {
        let c = f * inv_n;
        row.iter_mut().for_each(|x| *x *= c);
    });
    FeatureMoments { u, v }
}

fn moments_sampled(
    w: &Mat,
    x: &Mat,
    a: f64,
    h: f64,
    rho: &ActivationProfile,
    draws: usize,
    seed: u64,
) -> FeatureMoments {
    let (p, d, n) = (w.rows, w.cols, x.rows);
    let per_chunk = (DATA_CHUNK / draws).max(1);
    let sh = h.sqrt();
    let mut u = Mat::zeros(p, p);
    let mut v = Mat::zeros(p, d);
    for start in (0..n).step_by(per_chunk) {
        let nc = per_chunk.min(n - start);
        let cols = nc * draws;
        let mut z = Mat::zeros(cols, d);
        z.data.par_chunks_mut(draws * d).enumerate().for_each(|(i, block)| {
            normals_into(seed, Purpose::FitNoise, (start + i) as u64, block);
        });
        let mut inputs = z.clone();
        inputs.data.par_chunks_mut(d).enumerate().for_each(|(r, row)| {
            let xi = x.row(start + r / draws);
            row.iter_mut().zip(xi).for_each(|(v, &xv)| *v = a * xv + sh * *v);
        });
        let phi = features(w, &inputs, rho);
        let phi = &phi;
        u.data.par_chunks_mut(BLOCK * p).enumerate().for_each(|(blk, ublock)| {
            let r0 = blk * BLOCK;
            let rows = ublock.len() / p;
            let upto = r0 + rows;
            let av = View { data: &phi.data[r0 * cols..], rs: cols as isize, cs: 1 };
            let bv = View { data: &phi.data, rs: 1, cs: cols as isize };
            linalg::gemm_strided(rows, cols, upto, av, bv, 1.0, ublock, p);
        });
        gemm(1.0, View::n(phi), View::n(&z), cols, 1.0, &mut v);
    }
    let inv = 1.0 / (n * draws) as f64;
    u.data.par_iter_mut().for_each(|x| *x *= inv);
    v.data.par_iter_mut().for_each(|x| *x *= inv);
    u.symmetrize_from_lower();
    FeatureMoments { u, v }
}

/// Ridge-optimal readout with one factorization shared by all nested
/// feature prefixes: `(U + λI) = LLᵀ` and `Y = L⁻¹V`; the prefix of size q
/// uses the leading blocks of both.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    l: Mat,
    y: Mat,
    pub lambda: f64,
    pub h: f64,
}

impl RidgeFit {
    pub fn new(mut u: Mat, v: &Mat, lambda: f64, h: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(invalid("lambda", format!("must be > 0, got {lambda}")));
        }
        assert_eq!(u.rows, v.rows, "U and V disagree on p");
        let p = u.rows;
        for j in 0..p {
            u.data[j * p + j] += lambda;
        }
        cholesky_in_place(&mut u)?;
        let mut y = v.clone();
        forward_solve(&u, p, &mut y);
        Ok(Self { l: u, y, lambda, h })
    }

    pub fn p_max(&self) -> usize {
        self.l.rows
    }

    /// `B = (U_q + λ)⁻¹ V_q` (q×d): the network predicts `z ≈ Bᵀ ϱ(Wx/√d)`.
    pub fn readout(&self, q: usize) -> Mat {
        assert!(q <= self.p_max());
        let mut b = self.y.top_rows(q);
        backward_solve(&self.l, q, &mut b);
        b
    }

    /// In-sample DSM loss with the exact noise average:
    /// `1 − tr(BᵀV)/d − λ‖B‖²/d`, where `tr(BᵀV) = ‖Y_q‖²`.
    pub fn train_error_closed_form(&self, q: usize, b: &Mat) -> f64 {
        let d = self.y.cols as f64;
        let yq = pairwise_sum_by_rows(&self.y, q);
        1.0 - yq / d - self.lambda * b.frobenius_sq() / d
    }
}

fn pairwise_sum_by_rows(m: &Mat, rows: usize) -> f64 {
    linalg::pairwise_sum_by(&m.data[..rows * m.cols], |v| v * v)
}

/// `Â = −√(p/h) Bᵀ` (d×p) from the readout, so `s(x) = (Â/√p) ϱ(Wx/√d)`.
pub fn a_hat_from_readout(b: &Mat, h: f64) -> Mat {
    let p = b.rows as f64;
    let mut a = b.transpose();
    let c = -(p / h).sqrt();
    a.data.iter_mut().for_each(|v| *v *= c);
    a
}

/// Ridge minimizer `Â/√p = −(1/√h) Vᵀ(U + λI)⁻¹`, via one SPD factorization.
pub fn fit(u: &Mat, v: &Mat, lambda: f64, h: f64) -> Result<Mat> {
    let r = RidgeFit::new(u.clone(), v, lambda, h)?;
    Ok(a_hat_from_readout(&r.readout(r.p_max()), h))
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        if xs.len() < 2 {
            return Self { mean, se: 0.0 };
        }
        let var = linalg::pairwise_sum_by(xs, |v| (v - mean) * (v - mean)) / (n - 1.0);
        Self { mean, se: (var / n).sqrt() }
    }

    pub fn exact(mean: f64) -> Self {
        Self { mean, se: 0.0 }
    }
}

/// Empirical errors of one seed at one feature count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPoint {
    pub p: usize,
    pub e_test: Estimate,
    pub e_train: Estimate,
    pub score: Option<ScoreEstimate>,
}

/// Per-sample DSM losses `‖z − Bᵀϕ‖²/d` of the readouts on fresh pairs
/// `x = a σ(Mξ/√D) + √h z`, one vector per readout.
fn test_losses(cfg: &SimConfig, data: &Dataset, readouts: &[Mat]) -> Vec<Vec<f64>> {
    let (a, sh, d) = (cfg.a(), cfg.h().sqrt(), cfg.d);
    let mut out = vec![Vec::with_capacity(cfg.n_test); readouts.len()];
    for start in (0..cfg.n_test).step_by(EVAL_CHUNK) {
        let k = EVAL_CHUNK.min(cfg.n_test - start);
        let xi = gaussian_rows(cfg.seed, Purpose::TestLatent, start, k, cfg.big_d);
        let x0 = manifold_points(&data.m, &xi, &cfg.sigma);
        let z = gaussian_rows(cfg.seed, Purpose::TestNoise, start, k, d);
        let mut inputs = x0;
        inputs.data.iter_mut().zip(&z.data).for_each(|(x, &zv)| *x = a * *x + sh * zv);
        let phi = features(&data.w, &inputs, &cfg.rho);
        for (b, dst) in readouts.iter().zip(out.iter_mut()) {
            dst.extend(losses_against(&phi, b, &z));
        }
    }
    out
}

/// `‖z_k − Bᵀϕ_k‖²/d` for features ϕ (p_max×k, leading rows used) and noise rows z.
fn losses_against(phi: &Mat, b: &Mat, z: &Mat) -> Vec<f64> {
    let pred = predict(phi, b);
    let d = z.cols;
    pred.data
        .par_chunks(d)
        .zip(z.data.par_chunks(d))
        .map(|(pr, zr)| pr.iter().zip(zr).map(|(p, z)| (z - p) * (z - p)).sum::<f64>() / d as f64)
        .collect()
}

/// Predicted noise `ϕ[:q]ᵀ B` (k×d).
pub(crate) fn predict(phi: &Mat, b: &Mat) -> Mat {
    let k = phi.cols;
    let mut pred = Mat::zeros(k, b.cols);
    gemm(1.0, View { data: &phi.data, rs: 1, cs: k as isize }, View::n(b), b.rows, 0.0, &mut pred);
    pred
}

/// Train losses with fresh noise: per datum, the mean over `draws` noise draws.
fn train_losses_sampled(cfg: &SimConfig, data: &Dataset, readouts: &[Mat], draws: usize) -> Vec<Vec<f64>> {
    let (a, sh, d) = (cfg.a(), cfg.h().sqrt(), cfg.d);
    let per_chunk = (EVAL_CHUNK / draws).max(1);
    let mut out = vec![Vec::with_capacity(cfg.n); readouts.len()];
    for start in (0..cfg.n).step_by(per_chunk) {
        let nc = per_chunk.min(cfg.n - start);
        let mut z = Mat::zeros(nc * draws, d);
        z.data.par_chunks_mut(draws * d).enumerate().for_each(|(i, block)| {
            normals_into(cfg.seed, Purpose::TrainNoise, (start + i) as u64, block);
        });
        let mut inputs = z.clone();
        inputs.data.par_chunks_mut(d).enumerate().for_each(|(r, row)| {
            let xi = data.x.row(start + r / draws);
            row.iter_mut().zip(xi).for_each(|(v, &xv)| *v = a * xv + sh * *v);
        });
        let phi = features(&data.w, &inputs, &cfg.rho);
        for (b, dst) in readouts.iter().zip(out.iter_mut()) {
            let l = losses_against(&phi, b, &z);
            dst.extend(l.chunks(draws).map(|c| c.iter().sum::<f64>() / draws as f64));
        }
    }
    out
}

/// Empirical errors of a fitted model at every prefix in `cfg.p`.
pub fn empirical_errors(cfg: &SimConfig, data: &Dataset, fit: &RidgeFit) -> Result<Vec<SimPoint>> {
    let readouts: Vec<Mat> = cfg.p.iter().map(|&q| fit.readout(q)).collect();
    let test = test_losses(cfg, data, &readouts);
    let train: Vec<Estimate> = match cfg.noise {
        NoiseAverage::Exact { .. } => {
            cfg.p.iter().zip(&readouts).map(|(&q, b)| Estimate::exact(fit.train_error_closed_form(q, b))).collect()
        }
        NoiseAverage::Sampled { draws } => {
            train_losses_sampled(cfg, data, &readouts, draws).iter().map(|l| Estimate::from_samples(l)).collect()
        }
    };
    let scores = if cfg.score {
        let exact = LinearExactScore::new(&data.m, cfg.t, &cfg.sigma)?;
        Some(score::empirical_score_errors(cfg, data, &readouts, &exact))
    } else {
        None
    };
    Ok(cfg
        .p
        .iter()
        .enumerate()
        .map(|(i, &q)| SimPoint {
            p: q,
            e_test: Estimate::from_samples(&test[i]),
            e_train: train[i],
            score: scores.as_ref().map(|s| s[i]),
        })
        .collect())
}

/// Full pipeline for one seed: generate, fit at the largest p, evaluate all prefixes.
pub fn simulate_seed(cfg: &SimConfig) -> Result<Vec<SimPoint>> {
    let data = generate(cfg)?;
    let fm = feature_moments(&data.w, &data.x, cfg.t, &cfg.rho, cfg.noise, cfg.seed)?;
    let fit = RidgeFit::new(fm.u, &fm.v, cfg.lambda, cfg.h())?;
    empirical_errors(cfg, &data, &fit)
}

/// Seed-aggregated errors at one feature count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub p: usize,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SimPoint>,
    pub e_test: Estimate,
    pub e_train: Estimate,
    pub e_score: Option<Estimate>,
    pub e_star: Option<Estimate>,
    pub wall_time_s: f64,
}

/// Runs every seed and aggregates: with two or more seeds the standard
/// error is the spread of the per-seed means, otherwise the within-seed one.
pub fn simulate(cfg: &SimConfig, seeds: &[u64]) -> Result<Vec<SimResult>> {
    if seeds.is_empty() {
        return Err(invalid("seeds", "need at least one seed"));
    }
    cfg.validate()?;
    let start = Instant::now();
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let c = SimConfig { seed, ..cfg.clone() };
        runs.push(simulate_seed(&c)?);
    }
    let wall = start.elapsed().as_secs_f64();
    let agg = |vals: Vec<Estimate>| -> Estimate {
        if vals.len() == 1 {
            vals[0]
        } else {
            let means: Vec<f64> = vals.iter().map(|e| e.mean).collect();
            Estimate::from_samples(&means)
        }
    };
    Ok((0..cfg.p.len())
        .map(|i| {
            let per_seed: Vec<SimPoint> = runs.iter().map(|r| r[i].clone()).collect();
            let scores: Option<Vec<ScoreEstimate>> = per_seed.iter().map(|s| s.score).collect();
            SimResult {
                p: cfg.p[i],
                seeds: seeds.to_vec(),
                e_test: agg(per_seed.iter().map(|s| s.e_test).collect()),
                e_train: agg(per_seed.iter().map(|s| s.e_train).collect()),
                e_score: scores.as_ref().map(|v| agg(v.iter().map(|s| s.e_score).collect())),
                e_star: scores.as_ref().map(|v| agg(v.iter().map(|s| s.e_star).collect())),
                per_seed,
                wall_time_s: wall,
            }
        })
        .collect())
}
