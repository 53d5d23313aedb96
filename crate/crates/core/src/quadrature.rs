//! Quadrature rules for expectations under the standard normal law.
//!
//! Every [`Rule`] integrates against N(0, 1): weights sum to one and
//! `rule.expect(f)` approximates `E[f(g)]`, `g ~ N(0, 1)`.

use std::f64::consts::{PI, SQRT_2};

/// Nodes and weights of a quadrature rule for the standard normal measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[f(g)]` under the rule.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Probabilists' Gauss-Hermite rule with `n` nodes, normalized to N(0, 1).
///
/// Exact for polynomials of degree `2n - 1`. Nodes are eigenvalues of the
/// Jacobi matrix, isolated by Sturm-sequence bisection and polished by
/// Newton steps on the orthonormal recurrence; weights follow from the
/// derivative of the orthonormal polynomial at each node.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
    let nf = n as f64;
    let pim4 = PI.powf(-0.25);
    let bound = (2.0 * nf).sqrt() + 1.0;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 0..n {
        // k-th smallest eigenvalue: the smallest x with more than k eigenvalues below it.
        let (mut lo, mut hi) = (-bound, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if sturm_count(n, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut z = 0.5 * (lo + hi);
        for _ in 0..3 {
            let (p1, p2) = hermite_orthonormal(n, z, pim4);
            let dp = (2.0 * nf).sqrt() * p2;
            if dp == 0.0 {
                break;
            }
            let step = p1 / dp;
            if step.abs() > (hi - lo).abs() + 1e-12 {
                break;
            }
            z -= step;
        }
        let (_, p2) = hermite_orthonormal(n, z, pim4);
        let pp = (2.0 * nf).sqrt() * p2;
        // Physicists' weight e^{-x^2} -> standard normal: x -> sqrt(2) x, w -> w / sqrt(pi).
        nodes.push(z * SQRT_2);
        weights.push(2.0 / (pp * pp) / PI.sqrt());
    }
    // Symmetrize to remove bisection asymmetry.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Rule { nodes, weights }
}

/// Number of eigenvalues below `x` of the physicists' Hermite Jacobi matrix
/// (zero diagonal, off-diagonal `sqrt(k/2)`).
fn sturm_count(n: usize, x: f64) -> usize {
    let mut count = 0;
    let mut q = -x;
    if q < 0.0 {
        count += 1;
    }
    for k in 1..n {
        let b2 = k as f64 / 2.0;
        let denom = if q == 0.0 { f64::EPSILON } else { q };
        q = -x - b2 / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Orthonormal physicists' Hermite values (p_n(z), p_{n-1}(z)).
fn hermite_orthonormal(n: usize, z: f64, p0: f64) -> (f64, f64) {
    let mut p1 = p0;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, z);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
    }
    let d = n as f64 * (z * p1 - p2) / (z * z - 1.0);
    (p1, d)
}

/// Half-width of the truncated real line used by piecewise rules.
/// Normal mass beyond it is below 1e-32.
pub const PIECEWISE_HALF_WIDTH: f64 = 12.0;

/// Normal-weighted composite Gauss-Legendre rule whose panels never straddle
/// a breakpoint. Used for integrands with kinks, where Gauss-Hermite loses
/// its spectral convergence.
pub fn gaussian_piecewise(breaks: &[f64], max_panel: f64, order: usize) -> Rule {
    let (gx, gw) = gauss_legendre(order);
    let l = PIECEWISE_HALF_WIDTH;
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|b| b.is_finite() && b.abs() < l).collect();
    cuts.push(-l);
    cuts.push(l);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    let inv_sqrt_2pi = 1.0 / (2.0 * PI).sqrt();
    for seg in cuts.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        let panels = ((hi - lo) / max_panel).ceil().max(1.0) as usize;
        let width = (hi - lo) / panels as f64;
        for k in 0..panels {
            let a = lo + k as f64 * width;
            let half = 0.5 * width;
            let mid = a + half;
            for (&t, &wt) in gx.iter().zip(&gw) {
                let x = mid + half * t;
                nodes.push(x);
                weights.push(wt * half * inv_sqrt_2pi * (-0.5 * x * x).exp());
            }
        }
    }
    Rule { nodes, weights }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Normalized probabilists' Hermite values h_k = He_k(x)/sqrt(k!) for
/// k = 0..out.len(), by the stable three-term recurrence.
pub fn hermite_normalized(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len().saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(k: u32) -> f64 {
        (1..=k).filter(|j| j % 2 == 1).map(f64::from).product()
    }

    #[test]
    fn hermite_rule_reproduces_gaussian_moments() {
        for n in [10, 80, 200] {
            let r = gauss_hermite(n);
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            for k in 1..(n.min(21) as u32) {
                let m = r.expect(|x| x.powi(2 * k as i32));
                let exact = double_factorial_odd(2 * k - 1);
                assert!((m / exact - 1.0).abs() < 1e-11, "n={n} k={k} {m} vs {exact}");
                assert!(r.expect(|x| x.powi(2 * k as i32 - 1)).abs() < 1e-10 * exact);
            }
        }
    }

    #[test]
    fn hermite_nodes_are_sorted_and_symmetric() {
        let r = gauss_hermite(201);
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(r.nodes[100].abs() < 1e-14);
        for i in 0..201 {
            assert!((r.nodes[i] + r.nodes[200 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((i - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn piecewise_rule_handles_relu_kink() {
        let r = gaussian_piecewise(&[0.0], 0.5, 16);
        let m = r.expect(|x| x.max(0.0));
        assert!((m - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-14);
        assert!((r.expect(|x| x.max(0.0).powi(2)) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn normalized_hermite_are_orthonormal() {
        let r = gauss_hermite(120);
        let mut h = vec![0.0; 40];
        let mut gram = vec![0.0; 40 * 40];
        for (&x, &w) in r.nodes.iter().zip(&r.weights) {
            hermite_normalized(x, &mut h);
            for i in 0..40 {
                for j in 0..40 {
                    gram[i * 40 + j] += w * h[i] * h[j];
                }
            }
        }
        for i in 0..40 {
            for j in 0..40 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i * 40 + j] - e).abs() < 1e-10, "({i},{j})");
            }
        }
    }
}
