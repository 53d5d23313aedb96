//! Exact score of the linear hidden manifold, the empirical score error and
//! the empirical optimal (memorizing) score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{backward_solve, cholesky_in_place, forward_solve, matmul_nt, Mat};
use super::rng::Purpose;
use super::{features, gaussian_rows, manifold_points, predict, Dataset, Estimate, SimConfig, EVAL_CHUNK};
use crate::activation::ActivationProfile;
use crate::error::{invalid, Error, Result};

/// `s*(x) = −(a² MMᵀ/D + h I)⁻¹ x` with the factorization cached.
#[derive(Debug, Clone)]
pub struct LinearExactScore {
    l: Mat,
    pub a: f64,
    pub h: f64,
}

impl LinearExactScore {
    pub fn new(m: &Mat, t: f64, sigma: &ActivationProfile) -> Result<Self> {
        if !sigma.is_identity() {
            return Err(Error::Unsupported("exact score is closed-form only for sigma = identity".into()));
        }
        if !(t > 0.0) {
            return Err(invalid("t", format!("must be > 0, got {t}")));
        }
        let a = (-t).exp();
        let h = 1.0 - a * a;
        let mut s = matmul_nt(m, m);
        let c = a * a / m.cols as f64;
        let d = s.rows;
        s.data.iter_mut().for_each(|v| *v *= c);
        for i in 0..d {
            s.data[i * d + i] += h;
        }
        cholesky_in_place(&mut s)?;
        Ok(Self { l: s, a, h })
    }

    /// Scores of the rows of `xs` (k×d), one per row.
    pub fn score_rows(&self, xs: &Mat) -> Mat {
        let mut b = xs.transpose();
        let d = self.l.rows;
        forward_solve(&self.l, d, &mut b);
        backward_solve(&self.l, d, &mut b);
        b.data.iter_mut().for_each(|v| *v = -*v);
        b.transpose()
    }
}

/// Exact score at a single point.
pub fn exact_score_linear(x: &[f64], m: &Mat, t: f64, sigma: &ActivationProfile) -> Result<Vec<f64>> {
    let s = LinearExactScore::new(m, t, sigma)?;
    Ok(s.score_rows(&Mat::from_vec(1, x.len(), x.to_vec())).data)
}

/// Monte Carlo errors of one readout over draws `x = a Mξ/√D + √h z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEstimate {
    /// `(1/d)‖s_Â(x) − s*(x)‖²`.
    pub e_score: Estimate,
    /// `(1/d)‖√h s*(x) + z‖²`.
    pub e_star: Estimate,
    /// DSM test loss of the readout on the same draws.
    pub e_test: Estimate,
    /// Per-draw `h e_score + e_star`.
    pub decomposition: Estimate,
}

/// Score errors of several readouts (prefixes of the same W) on shared draws.
pub(crate) fn empirical_score_errors(
    cfg: &SimConfig,
    data: &Dataset,
    readouts: &[Mat],
    exact: &LinearExactScore,
) -> Vec<ScoreEstimate> {
    let (a, h, d) = (cfg.a(), cfg.h(), cfg.d);
    let sh = h.sqrt();
    let k_total = cfg.n_mc_score;
    let mut cols: Vec<[Vec<f64>; 4]> = (0..readouts.len()).map(|_| Default::default()).collect();
    for start in (0..k_total).step_by(EVAL_CHUNK) {
        let k = EVAL_CHUNK.min(k_total - start);
        let xi = gaussian_rows(cfg.seed, Purpose::ScoreLatent, start, k, cfg.big_d);
        let x0 = manifold_points(&data.m, &xi, &cfg.sigma);
        let z = gaussian_rows(cfg.seed, Purpose::ScoreNoise, start, k, d);
        let mut xt = x0;
        xt.data.iter_mut().zip(&z.data).for_each(|(x, &zv)| *x = a * *x + sh * zv);
        let s_star = exact.score_rows(&xt);
        let star: Vec<f64> = s_star
            .data
            .par_chunks(d)
            .zip(z.data.par_chunks(d))
            .map(|(s, zr)| s.iter().zip(zr).map(|(s, z)| (sh * s + z).powi(2)).sum::<f64>() / d as f64)
            .collect();
        let phi = features(&data.w, &xt, &cfg.rho);
        for (b, out) in readouts.iter().zip(cols.iter_mut()) {
            // Network score −pred/√h.
            let pred = predict(&phi, b);
            let rows: Vec<(f64, f64)> = pred
                .data
                .par_chunks(d)
                .zip(s_star.data.par_chunks(d))
                .zip(z.data.par_chunks(d))
                .map(|((p, s), zr)| {
                    let mut es = 0.0;
                    let mut et = 0.0;
                    for i in 0..d {
                        let diff = -p[i] / sh - s[i];
                        es += diff * diff;
                        et += (zr[i] - p[i]).powi(2);
                    }
                    (es / d as f64, et / d as f64)
                })
                .collect();
            for (i, &(es, et)) in rows.iter().enumerate() {
                out[0].push(es);
                out[1].push(star[i]);
                out[2].push(et);
                out[3].push(h * es + star[i]);
            }
        }
    }
    cols.iter()
        .map(|c| ScoreEstimate {
            e_score: Estimate::from_samples(&c[0]),
            e_star: Estimate::from_samples(&c[1]),
            e_test: Estimate::from_samples(&c[2]),
            decomposition: Estimate::from_samples(&c[3]),
        })
        .collect()
}

/// Score error of a single readout `B` (p×d, using the leading rows of W).
pub fn empirical_score_error(cfg: &SimConfig, data: &Dataset, b: &Mat) -> Result<ScoreEstimate> {
    let exact = LinearExactScore::new(&data.m, cfg.t, &cfg.sigma)?;
    Ok(empirical_score_errors(cfg, data, std::slice::from_ref(b), &exact)[0])
}

/// Minimizer of the empirical DSM loss: softmax over training points of
/// `−‖x_t − a x_i‖²/(2h)` applied to `−(x_t − a x_i)/h`.
pub fn empirical_optimal_score(xt: &[f64], x: &Mat, t: f64) -> Vec<f64> {
    assert_eq!(xt.len(), x.cols, "dimension mismatch");
    assert!(x.rows > 0, "empty dataset");
    let a = (-t).exp();
    let h = 1.0 - a * a;
    let logits: Vec<f64> = (0..x.rows)
        .map(|i| -x.row(i).iter().zip(xt).map(|(xi, y)| (y - a * xi).powi(2)).sum::<f64>() / (2.0 * h))
        .collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; xt.len()];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let c = w / total;
        for ((o, y), xi) in out.iter_mut().zip(xt).zip(x.row(i)) {
            *o -= c * (y - a * xi) / h;
        }
    }
    out
}
