//! Gap between the second moment of `f(wᵀx/√d)` under hidden-manifold data
//! and under its Gaussian equivalent `ν₁Mξ′/√D + √(1−ν₁²) z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linalg::{matmul, matmul_nt, Mat};
use super::rng::{normals_into, Purpose};
use super::{gaussian_rows, Estimate};
use crate::activation::ActivationProfile;
use crate::error::{invalid, Error, Result};
use crate::quadrature::gauss_hermite;

const GAP_CHUNK: usize = 1024;

/// One fixed draw of (w₁, w₂, M).
#[derive(Debug, Clone)]
pub struct GapDraw {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// d×D.
    pub m: Mat,
}

impl GapDraw {
    pub fn new(d: usize, big_d: usize, seed: u64) -> Self {
        let mut w1 = vec![0.0; d];
        let mut w2 = vec![0.0; d];
        normals_into(seed, Purpose::GapW, 0, &mut w1);
        normals_into(seed, Purpose::GapW, 1, &mut w2);
        let m = gaussian_rows(seed, Purpose::GapManifold, 0, d, big_d);
        Self { w1, w2, m }
    }

    pub fn d(&self) -> usize {
        self.m.rows
    }

    pub fn big_d(&self) -> usize {
        self.m.cols
    }

    /// `Mᵀw/√(dD)` for both weight vectors.
    fn projected(&self) -> [Vec<f64>; 2] {
        let (d, big_d) = (self.d() as f64, self.big_d() as f64);
        let c = 1.0 / (d * big_d).sqrt();
        [&self.w1, &self.w2].map(|w| {
            (0..self.big_d()).map(|k| c * (0..self.d()).map(|r| self.m.get(r, k) * w[r]).sum::<f64>()).collect()
        })
    }

    /// Covariance of (φ′₁, φ′₂): `ν₁² wᵢᵀ(MMᵀ/D)wⱼ/d + (1 − ν₁²) wᵢᵀwⱼ/d`.
    pub fn gaussian_covariance(&self, nu1: f64) -> [[f64; 2]; 2] {
        let pr = self.projected();
        let d = self.d() as f64;
        let ws = [&self.w1, &self.w2];
        let mut s = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let lin: f64 = pr[i].iter().zip(&pr[j]).map(|(a, b)| a * b).sum();
                let iso: f64 = ws[i].iter().zip(ws[j]).map(|(a, b)| a * b).sum::<f64>() / d;
                s[i][j] = nu1 * nu1 * lin + (1.0 - nu1 * nu1) * iso;
            }
        }
        s
    }
}

/// Monte Carlo gap estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    /// |signed|.
    pub gap: f64,
    /// Mean of `f(φ₁)f(φ₂) − f(φ′₁)f(φ′₂)`.
    pub signed: f64,
    pub se: f64,
    pub non_gaussian: f64,
    pub gaussian: f64,
}

/// Gap for a fresh draw of (w₁, w₂, M) from `seed`, with `n_mc` samples per side.
pub fn gaussian_equivalence_gap(
    f: &ActivationProfile,
    d: usize,
    big_d: usize,
    sigma: &ActivationProfile,
    n_mc: usize,
    seed: u64,
) -> Result<GapEstimate> {
    gap_for_draw(f, &GapDraw::new(d, big_d, seed), sigma, n_mc, seed)
}

/// Gap at a given draw.
///
/// With `B` an orthonormal basis of span(Mᵀw₁, Mᵀw₂), the latent splits as
/// `ξ = B s + ξ⊥` with `s ~ N(0, I₂)` independent of `ξ⊥`. The Gaussian side
/// depends on ξ′ only through `s`, so its expectation is a bivariate
/// Gaussian integral and is evaluated by quadrature. The non-Gaussian side
/// is averaged over `n_mc` draws of `ξ⊥` of the conditional expectation
/// `E[f(φ₁)f(φ₂) | ξ⊥]`, integrated over `s` by a tensor Gauss–Hermite rule.
/// Conditioning removes the linear part of φ, which carries most of the
/// per-sample variance.
pub fn gap_for_draw(
    f: &ActivationProfile,
    draw: &GapDraw,
    sigma: &ActivationProfile,
    n_mc: usize,
    seed: u64,
) -> Result<GapEstimate> {
    if n_mc < 2 {
        return Err(invalid("n_mc", "needs at least two samples"));
    }
    if f.expect(|v, _| v).abs() > 1e-10 {
        return Err(invalid("f", "must have zero Gaussian mean"));
    }
    let (d, big_d) = (draw.d(), draw.big_d());
    let basis = span_basis(&draw.projected());
    // P = M B/√D (d×k), so u = Mξ/√D = Mξ⊥/√D + P s.
    let inv_big = 1.0 / (big_d as f64).sqrt();
    let k = basis.len();
    let p: Vec<[f64; 2]> = (0..d)
        .map(|r| {
            let row = draw.m.row(r);
            let mut out = [0.0; 2];
            for (j, b) in basis.iter().enumerate() {
                out[j] = inv_big * row.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
            out
        })
        .collect();
    // Polynomial maps make the integrand a polynomial of degree 2·deg f·deg σ in s.
    let n_nodes = match (f.polynomial_degree(), sigma.polynomial_degree()) {
        (Some(df), Some(ds)) => (df * ds + 1).min(CONDITIONAL_NODES),
        _ => CONDITIONAL_NODES,
    };
    let rule = gauss_hermite(n_nodes);
    let nodes: Vec<([f64; 2], f64)> = if k == 2 {
        rule.nodes
            .iter()
            .zip(&rule.weights)
            .flat_map(|(&x, &wx)| rule.nodes.iter().zip(&rule.weights).map(move |(&y, &wy)| ([x, y], wx * wy)))
            .collect()
    } else {
        rule.nodes.iter().zip(&rule.weights).map(|(&x, &w)| ([x, 0.0], w)).collect()
    };
    let inv_d = 1.0 / (d as f64).sqrt();
    let expansion = sigma.monomial_coeffs().map(SpanExpansion::new);
    let mut cond = Vec::with_capacity(n_mc);
    for start in (0..n_mc).step_by(GAP_CHUNK) {
        let rows = GAP_CHUNK.min(n_mc - start);
        let xi = gaussian_rows(seed, Purpose::GapLatent, start, rows, big_d);
        let pre = matmul_nt(&xi, &draw.m);
        let vals: Vec<f64> = (0..rows)
            .into_par_iter()
            .map(|s| {
                // Coordinates of ξ in the span, removed to get Mξ⊥/√D.
                let xr = xi.row(s);
                let mut c = [0.0; 2];
                for (j, b) in basis.iter().enumerate() {
                    c[j] = b.iter().zip(xr).map(|(x, y)| x * y).sum();
                }
                let u0: Vec<f64> =
                    pre.row(s).iter().zip(&p).map(|(&u, pr)| u * inv_big - pr[0] * c[0] - pr[1] * c[1]).collect();
                match &expansion {
                    Some(ex) => {
                        let coef = ex.coefficients(&u0, &p, &draw.w1, &draw.w2);
                        nodes
                            .iter()
                            .map(|(x, wt)| {
                                let (p1, p2) = ex.evaluate(&coef, *x);
                                wt * f.eval(p1 * inv_d) * f.eval(p2 * inv_d)
                            })
                            .sum()
                    }
                    None => nodes
                        .iter()
                        .map(|(x, wt)| {
                            let (mut p1, mut p2) = (0.0, 0.0);
                            for r in 0..d {
                                let v = sigma.eval(u0[r] + p[r][0] * x[0] + p[r][1] * x[1]);
                                p1 += draw.w1[r] * v;
                                p2 += draw.w2[r] * v;
                            }
                            wt * f.eval(p1 * inv_d) * f.eval(p2 * inv_d)
                        })
                        .sum(),
                }
            })
            .collect();
        cond.extend(vals);
    }
    let e = Estimate::from_samples(&cond);
    let gaussian = bivariate_expectation(f, draw.gaussian_covariance(sigma.mu1()));
    let signed = e.mean - gaussian;
    let out = GapEstimate { gap: signed.abs(), signed, se: e.se, non_gaussian: e.mean, gaussian };
    if out.se > 0.5 * out.gap {
        log::warn!("gap estimate {:e} is inconclusive: standard error {:e}", out.gap, out.se);
    }
    Ok(out)
}

/// For polynomial σ of degree m, `Σ_r w_r σ(u_r + p_r·s)` is a polynomial
/// of degree m in `s ∈ R²`; its coefficients follow from the Taylor
/// expansion of σ at each `u_r`.
struct SpanExpansion {
    mono: Vec<f64>,
    /// `binom[k][j] = C(k, j)`.
    binom: Vec<Vec<f64>>,
    /// `(a, b)` exponent pairs with `a + b ≤ m`, grouped by total degree.
    terms: Vec<(usize, usize)>,
}

impl SpanExpansion {
    fn new(mono: &[f64]) -> Self {
        let m = mono.len() - 1;
        let mut binom = vec![vec![0.0; m + 1]; m + 1];
        for k in 0..=m {
            binom[k][0] = 1.0;
            for j in 1..=k {
                binom[k][j] = binom[k - 1][j - 1] + if j < k { binom[k - 1][j] } else { 0.0 };
            }
        }
        let terms = (0..=m).flat_map(|j| (0..=j).map(move |a| (a, j - a))).collect();
        Self { mono: mono.to_vec(), binom, terms }
    }

    /// Coefficients of `s₀^a s₁^b` for both weight vectors, in `terms` order.
    fn coefficients(&self, u0: &[f64], p: &[[f64; 2]], w1: &[f64], w2: &[f64]) -> [Vec<f64>; 2] {
        let m = self.mono.len() - 1;
        let mut out = [vec![0.0; self.terms.len()], vec![0.0; self.terms.len()]];
        let mut taylor = vec![0.0; m + 1];
        let mut pw0 = vec![1.0; m + 1];
        let mut pw1 = vec![1.0; m + 1];
        for r in 0..u0.len() {
            // σ^{(j)}(u)/j! = Σ_{k ≥ j} C(k, j) c_k u^{k−j}.
            for (j, tj) in taylor.iter_mut().enumerate() {
                *tj = (j..=m).rev().fold(0.0, |acc, k| acc * u0[r] + self.binom[k][j] * self.mono[k]);
            }
            for k in 1..=m {
                pw0[k] = pw0[k - 1] * p[r][0];
                pw1[k] = pw1[k - 1] * p[r][1];
            }
            for (i, &(a, b)) in self.terms.iter().enumerate() {
                let v = taylor[a + b] * self.binom[a + b][a] * pw0[a] * pw1[b];
                out[0][i] += w1[r] * v;
                out[1][i] += w2[r] * v;
            }
        }
        out
    }

    fn evaluate(&self, coef: &[Vec<f64>; 2], s: [f64; 2]) -> (f64, f64) {
        let (mut a0, mut a1) = (0.0, 0.0);
        for (i, &(a, b)) in self.terms.iter().enumerate() {
            let mono = s[0].powi(a as i32) * s[1].powi(b as i32);
            a0 += coef[0][i] * mono;
            a1 += coef[1][i] * mono;
        }
        (a0, a1)
    }
}

/// Gauss–Hermite nodes per latent direction in the conditional average of
/// non-polynomial maps.
const CONDITIONAL_NODES: usize = 12;

/// Orthonormal basis (Gram–Schmidt) of the nonzero span of the vectors.
fn span_basis(vs: &[Vec<f64>; 2]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut u = v.clone();
        for b in &basis {
            let c: f64 = b.iter().zip(&u).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            u.iter_mut().for_each(|x| *x /= norm);
            basis.push(u);
        }
    }
    basis
}

/// `E[f(g₁)f(g₂)]` for `(g₁, g₂) ~ N(0, s)` by a tensor Gauss–Hermite rule.
fn bivariate_expectation(f: &ActivationProfile, s: [[f64; 2]; 2]) -> f64 {
    let rule = gauss_hermite(GAUSSIAN_SIDE_NODES);
    let l11 = s[0][0].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { s[1][0] / l11 } else { 0.0 };
    let l22 = (s[1][1] - l21 * l21).max(0.0).sqrt();
    rule.expect(|x| {
        let fx = f.eval(l11 * x);
        rule.expect(|y| fx * f.eval(l21 * x + l22 * y))
    })
}

const GAUSSIAN_SIDE_NODES: usize = 64;

/// Exact gap for `f = He₂/√2` and a quadratic folding map
/// `σ(u) = β₁u + β₂(u² − 1)/√2`.
///
/// Each `φᵢ = bᵢᵀξ + ξᵀAᵢξ + cᵢ` is a Gaussian quadratic form, whose joint
/// cumulants are
/// `κ(Q_{i₁..iₙ}) = 2^{n−1}/n Σ_π tr(A_{π₁}⋯A_{πₙ}) + 2^{n−3} Σ_π b_{π₁}ᵀA_{π₂}⋯A_{πₙ₋₁}b_{πₙ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactGap {
    pub gap: f64,
    pub signed: f64,
    pub non_gaussian: f64,
    pub gaussian: f64,
}

pub fn gaussian_equivalence_gap_exact(
    f: &ActivationProfile,
    draw: &GapDraw,
    sigma: &ActivationProfile,
) -> Result<ExactGap> {
    let fc = f.normalized_coeffs();
    let is_he2 = fc.iter().enumerate().all(|(k, &c)| if k == 2 { (c - 1.0).abs() < 1e-10 } else { c.abs() < 1e-10 });
    if !is_he2 {
        return Err(Error::Unsupported("exact gap is implemented for f = He2/sqrt(2) only".into()));
    }
    let sc = sigma.normalized_coeffs();
    if sc.iter().skip(3).any(|c| c.abs() > 1e-10) || sc[0].abs() > 1e-10 {
        return Err(Error::Unsupported("exact gap needs a quadratic folding map".into()));
    }
    let (beta1, beta2) = (sc[1], sc[2]);
    let (d, big_d) = (draw.d(), draw.big_d());
    let (df, bf) = (d as f64, big_d as f64);
    let pr = draw.projected();
    let b: [Vec<f64>; 2] = [pr[0].iter().map(|v| beta1 * v).collect(), pr[1].iter().map(|v| beta1 * v).collect()];
    let q = beta2 / 2f64.sqrt();
    let ws = [&draw.w1, &draw.w2];
    let a: Vec<Mat> = ws
        .iter()
        .map(|w| {
            let mut scaled = draw.m.clone();
            for r in 0..d {
                scaled.row_mut(r).iter_mut().for_each(|v| *v *= w[r]);
            }
            let mut prod = matmul(&draw.m.transpose(), &scaled);
            let c = q / (bf * df.sqrt());
            prod.data.iter_mut().for_each(|v| *v *= c);
            prod
        })
        .collect();
    let c: Vec<f64> = ws.iter().map(|w| -q * w.iter().sum::<f64>() / df.sqrt()).collect();
    let prods: Vec<Mat> = (0..4).map(|e| matmul(&a[e / 2], &a[e % 2])).collect();
    let pair = |i: usize, j: usize| &prods[2 * i + j];
    let tr_prod = |x: &Mat, y: &Mat| -> f64 {
        let n = x.rows;
        (0..n).map(|r| (0..n).map(|k| x.get(r, k) * y.get(k, r)).sum::<f64>()).sum()
    };
    let trace = |seq: &[usize]| -> f64 {
        match seq.len() {
            1 => (0..big_d).map(|k| a[seq[0]].get(k, k)).sum(),
            2 => tr_prod(&a[seq[0]], &a[seq[1]]),
            3 => tr_prod(pair(seq[0], seq[1]), &a[seq[2]]),
            4 => tr_prod(pair(seq[0], seq[1]), pair(seq[2], seq[3])),
            _ => unreachable!("cumulants up to fourth order"),
        }
    };
    let chain = |seq: &[usize]| -> f64 {
        let mut v = b[*seq.last().expect("nonempty")].clone();
        for &k in seq[1..seq.len() - 1].iter().rev() {
            v = (0..big_d).map(|r| a[k].row(r).iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
        }
        b[seq[0]].iter().zip(&v).map(|(x, y)| x * y).sum()
    };
    let cumulant = |idx: &[usize]| -> f64 {
        let n = idx.len();
        let perms = permutations(idx);
        let tr: f64 = perms.iter().map(|p| trace(p)).sum();
        let bt: f64 = perms.iter().map(|p| chain(p)).sum();
        2f64.powi(n as i32 - 1) / n as f64 * tr + 2f64.powi(n as i32 - 3) * bt
    };
    let mu = [trace(&[0]) + c[0], trace(&[1]) + c[1]];
    let k11 = cumulant(&[0, 0]);
    let k22 = cumulant(&[1, 1]);
    let k12 = cumulant(&[0, 1]);
    let k112 = cumulant(&[0, 0, 1]);
    let k122 = cumulant(&[0, 1, 1]);
    let k1122 = cumulant(&[0, 0, 1, 1]);
    let y1122 = k1122 + k11 * k22 + 2.0 * k12 * k12;
    let m4 = y1122
        + 2.0 * mu[1] * k112
        + 2.0 * mu[0] * k122
        + mu[1] * mu[1] * k11
        + mu[0] * mu[0] * k22
        + 4.0 * mu[0] * mu[1] * k12
        + mu[0] * mu[0] * mu[1] * mu[1];
    let e1 = k11 + mu[0] * mu[0];
    let e2 = k22 + mu[1] * mu[1];
    let non_gaussian = 0.5 * (m4 - e1 - e2 + 1.0);
    let s = draw.gaussian_covariance(sigma.mu1());
    let gaussian = 0.5 * ((s[0][0] - 1.0) * (s[1][1] - 1.0) + 2.0 * s[0][1] * s[0][1]);
    let signed = non_gaussian - gaussian;
    Ok(ExactGap { gap: signed.abs(), signed, non_gaussian, gaussian })
}

/// All orderings of `idx` (with repeats, as the cumulant formula sums over S_n).
fn permutations(idx: &[usize]) -> Vec<Vec<usize>> {
    if idx.len() <= 1 {
        return vec![idx.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..idx.len() {
        let mut rest = idx.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}
