//! Gaussian moments of standardized activations.
//!
//! An [`ActivationProfile`] is a scalar nonlinearity shifted and scaled to
//! zero mean and unit variance under N(0, 1), together with its Hermite
//! expansion and the correlation kernel `c(γ) = E[ϱ(u)ϱ(v)]` for unit
//! Gaussians with correlation γ.
//!
//! Coefficients are kept in the normalized basis `h_k = He_k/√k!`, where
//! `β_k = E[ϱ(g) h_k(g)]` and `c(γ) = Σ β_k² γ^k`. The unnormalized
//! `α_k = E[ϱ(g) He_k(g)] = β_k √k!` are available via [`ActivationProfile::hermite`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss_hermite, gaussian_piecewise, hermite_normalized, normal_cdf, normal_pdf, Rule};

/// Default Hermite truncation order reported in profiles.
pub const DEFAULT_ORDER: usize = 16;
/// Order of the series used by [`ActivationProfile::c_gamma`] for smooth activations.
pub const SERIES_ORDER: usize = 128;
/// Gauss-Hermite nodes for 1-D expectations of smooth activations.
pub const QUADRATURE_NODES: usize = 200;
/// Gauss-Hermite nodes for shifted projections `E[ϱ(m + s u) h_ℓ(u)]`.
const PROJECTION_NODES: usize = 48;
/// Panel width and order of the piecewise rule used around kinks.
const PANEL_WIDTH: f64 = 0.25;
const PANEL_ORDER: usize = 16;

/// A piecewise-linear activation given on an ascending grid; extended
/// linearly beyond the grid ends.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Table {
    /// Requires a strictly increasing grid covering at least [-8, 8].
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(invalid("table", "need at least two (x, y) pairs of equal length"));
        }
        if !xs.windows(2).all(|w| w[0] < w[1]) {
            return Err(invalid("table", "grid must be strictly increasing"));
        }
        if xs[0] > -8.0 || xs[xs.len() - 1] < 8.0 {
            return Err(invalid("table", "grid must cover [-8, 8]"));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(invalid("table", "values must be finite"));
        }
        Ok(Self { xs, ys })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&g| g <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Raw (unstandardized) scalar nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    Identity,
    Relu,
    Tanh,
    /// Coefficients `c_1, c_2, ...` of `h_1, h_2, ...` (normalized Hermite basis).
    Hermite(Vec<f64>),
    Tabulated(Table),
}

impl Nonlinearity {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
            Self::Hermite(c) => hermite_series(c, x),
            Self::Tabulated(t) => t.eval(x),
        }
    }

    /// Points where the function is not smooth.
    fn breakpoints(&self) -> &[f64] {
        match self {
            Self::Relu => &[0.0],
            Self::Tabulated(t) => &t.xs,
            _ => &[],
        }
    }

    fn is_smooth(&self) -> bool {
        self.breakpoints().is_empty()
    }

    /// Folding map with 5% of its power in the nonlinear part: `hermite:[0.975, 0.223]`.
    pub fn weakly_nonlinear() -> Self {
        Self::Hermite(vec![0.975, 0.223])
    }
}

/// Above this degree the monomial form loses too much to cancellation.
const MAX_MONOMIAL_DEGREE: usize = 8;

/// Monomial coefficients of `Σ_k c_k h_k(x)`, `k ≥ 1`, via `He_{k+1} = x He_k − k He_{k−1}`.
fn hermite_to_monomial(c: &[f64]) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; n + 1];
    let mut prev = vec![0.0; n + 1];
    let mut cur = vec![0.0; n + 1];
    prev[0] = 1.0;
    cur[1] = 1.0;
    let mut fact = 1.0;
    for (k, &ck) in c.iter().enumerate() {
        let k1 = k + 1;
        fact *= k1 as f64;
        let norm = fact.sqrt();
        for (o, v) in out.iter_mut().zip(&cur) {
            *o += ck * v / norm;
        }
        let mut next = vec![0.0; n + 1];
        for j in 0..n {
            next[j + 1] += cur[j];
        }
        for (nj, pj) in next.iter_mut().zip(&prev) {
            *nj -= k1 as f64 * pj;
        }
        prev = cur;
        cur = next;
    }
    out
}

/// `Σ_k c_k h_k(x)` for `k ≥ 1`.
fn hermite_series(c: &[f64], x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    let mut sum = 0.0;
    for (k, &ck) in c.iter().enumerate() {
        let k1 = (k + 1) as f64;
        sum += ck * cur;
        let next = (x * cur - k1.sqrt() * prev) / (k1 + 1.0).sqrt();
        prev = cur;
        cur = next;
    }
    sum
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::Relu => f.write_str("relu"),
            Self::Tanh => f.write_str("tanh"),
            Self::Hermite(c) => {
                f.write_str("hermite:[")?;
                for (i, v) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            Self::Tabulated(t) => write!(f, "tabulated[{}]", t.xs.len()),
        }
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_matches('"');
        match s {
            "identity" => return Ok(Self::Identity),
            "relu" => return Ok(Self::Relu),
            "tanh" => return Ok(Self::Tanh),
            _ => {}
        }
        let body = s
            .strip_prefix("hermite:")
            .map(str::trim)
            .and_then(|b| b.strip_prefix('['))
            .and_then(|b| b.strip_suffix(']'))
            .ok_or_else(|| Error::ActivationSyntax(s.to_string()))?;
        let coeffs = body
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::ActivationSyntax(s.to_string()))?;
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::ActivationSyntax(s.to_string()));
        }
        Ok(Self::Hermite(coeffs))
    }
}

/// A standardized activation `ϱ(x) = (f(x) - shift)/scale` with its Gaussian moments.
#[derive(Debug, Clone)]
pub struct ActivationProfile {
    kind: Nonlinearity,
    shift: f64,
    scale: f64,
    mu1: f64,
    /// β_k for k = 0..=SERIES_ORDER.
    series: Vec<f64>,
    rule: Arc<Rule>,
    /// Monomial coefficients of the standardized map, for low-degree Hermite series.
    poly: Option<Arc<[f64]>>,
}

fn rule_for(kind: &Nonlinearity) -> Rule {
    if kind.is_smooth() {
        gauss_hermite(QUADRATURE_NODES)
    } else {
        gaussian_piecewise(kind.breakpoints(), PANEL_WIDTH, PANEL_ORDER)
    }
}

fn projection_rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(PROJECTION_NODES))
}

/// Standardizes a raw nonlinearity to zero mean and unit variance.
pub fn standardize(kind: Nonlinearity) -> Result<ActivationProfile> {
    let rule = rule_for(&kind);
    let mean = rule.expect(|x| kind.eval(x));
    let var = rule.expect(|x| (kind.eval(x) - mean).powi(2));
    if !(var >= 1e-12) {
        return Err(Error::ConstantActivation(var));
    }
    // Hermite mixtures have mean 0 and variance Σc² in closed form.
    let (shift, scale) = match &kind {
        Nonlinearity::Identity => (0.0, 1.0),
        Nonlinearity::Hermite(c) => (0.0, c.iter().map(|v| v * v).sum::<f64>().sqrt()),
        _ => (mean, var.sqrt()),
    };
    Ok(ActivationProfile::build(kind, shift, scale, rule))
}

impl ActivationProfile {
    fn build(kind: Nonlinearity, shift: f64, scale: f64, rule: Rule) -> Self {
        let mut series = vec![0.0; SERIES_ORDER + 1];
        match &kind {
            // Exact coefficients, so linear maps give μ₁ = 1 bitwise.
            Nonlinearity::Identity => {
                series[0] = -shift / scale;
                series[1] = 1.0 / scale;
            }
            Nonlinearity::Hermite(c) => {
                series[0] = -shift / scale;
                for (s, ck) in series.iter_mut().skip(1).zip(c) {
                    *s = ck / scale;
                }
            }
            _ => {
                let mut h = vec![0.0; SERIES_ORDER + 1];
                for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                    let fx = w * (kind.eval(x) - shift) / scale;
                    hermite_normalized(x, &mut h);
                    for (s, hk) in series.iter_mut().zip(&h) {
                        *s += fx * hk;
                    }
                }
            }
        }
        let mu1 = series[1];
        let poly = match &kind {
            Nonlinearity::Hermite(c) if c.len() <= MAX_MONOMIAL_DEGREE => {
                let mut m = hermite_to_monomial(c);
                m[0] -= shift;
                m.iter_mut().for_each(|v| *v /= scale);
                Some(m.into())
            }
            _ => None,
        };
        Self { kind, shift, scale, mu1, series, rule: Arc::new(rule), poly }
    }

    pub fn relu() -> Self {
        standardize(Nonlinearity::Relu).expect("relu standardizes")
    }

    pub fn tanh() -> Self {
        standardize(Nonlinearity::Tanh).expect("tanh standardizes")
    }

    pub fn identity() -> Self {
        standardize(Nonlinearity::Identity).expect("identity standardizes")
    }

    /// Parses the config grammar and standardizes.
    pub fn parse(s: &str) -> Result<Self> {
        standardize(s.parse()?)
    }

    pub fn kind(&self) -> &Nonlinearity {
        &self.kind
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `E[g ϱ(g)]`, the linear Hermite coefficient (μ₁ for ϱ, ν₁ for σ).
    pub fn mu1(&self) -> f64 {
        self.mu1
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, Nonlinearity::Identity)
    }

    /// Standardized activation value.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.poly {
            Some(m) => m.iter().rev().fold(0.0, |acc, &c| acc * x + c),
            None => (self.kind.eval(x) - self.shift) / self.scale,
        }
    }

    /// Monomial coefficients of the standardized map when it is a
    /// low-degree polynomial.
    pub fn monomial_coeffs(&self) -> Option<&[f64]> {
        match &self.kind {
            Nonlinearity::Identity => Some(&[0.0, 1.0]),
            _ => self.poly.as_deref(),
        }
    }

    /// Degree when the map is a polynomial.
    pub fn polynomial_degree(&self) -> Option<usize> {
        match &self.kind {
            Nonlinearity::Identity => Some(1),
            Nonlinearity::Hermite(c) => Some(c.iter().rposition(|&v| v != 0.0).map_or(0, |k| k + 1)),
            _ => None,
        }
    }

    /// `E[ψ(ϱ(g), g)]` under the profile's quadrature rule.
    pub fn expect<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> f64 {
        self.rule.expect(|x| f(self.eval(x), x))
    }

    /// Normalized coefficients β_k = E[ϱ h_k], k = 0..=SERIES_ORDER.
    pub fn normalized_coeffs(&self) -> &[f64] {
        &self.series
    }

    /// Unnormalized coefficients α_k = E[ϱ(g) He_k(g)] for k = 0..=DEFAULT_ORDER.
    pub fn hermite(&self) -> Vec<f64> {
        self.hermite_coeffs(DEFAULT_ORDER).0
    }

    /// α_0..=α_K and the tail mass `1 − Σ_{k≤K} α_k²/k!`.
    ///
    /// Logs a warning when the tail exceeds 1e-6.
    pub fn hermite_coeffs(&self, order: usize) -> (Vec<f64>, f64) {
        assert!(order >= 2, "Hermite truncation order must be at least 2");
        let beta = self.series_to(order);
        let mut fact_sqrt = 1.0;
        let alpha: Vec<f64> = beta
            .iter()
            .enumerate()
            .map(|(k, b)| {
                if k > 0 {
                    fact_sqrt *= (k as f64).sqrt();
                }
                b * fact_sqrt
            })
            .collect();
        let tail = 1.0 - beta.iter().map(|b| b * b).sum::<f64>();
        if tail > 1e-6 {
            log::warn!("Hermite tail mass {tail:.3e} at order {order} for {}", self.kind);
        }
        (alpha, tail)
    }

    fn series_to(&self, order: usize) -> Vec<f64> {
        if order <= SERIES_ORDER {
            return self.series[..=order].to_vec();
        }
        let mut beta = vec![0.0; order + 1];
        let mut h = vec![0.0; order + 1];
        for (&x, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            let fx = w * self.eval(x);
            hermite_normalized(x, &mut h);
            for (b, hk) in beta.iter_mut().zip(&h) {
                *b += fx * hk;
            }
        }
        beta
    }

    /// Mass of the Hermite series beyond the order used by `c_gamma`;
    /// zero for activations whose kernel is evaluated in closed form.
    pub fn c_gamma_tail(&self) -> f64 {
        match self.kind {
            Nonlinearity::Relu | Nonlinearity::Identity | Nonlinearity::Tabulated(_) => 0.0,
            _ => (1.0 - self.series.iter().map(|b| b * b).sum::<f64>()).max(0.0),
        }
    }

    /// Correlation kernel `c(γ) = E[ϱ(u)ϱ(v)]`, corr(u, v) = γ.
    ///
    /// ReLU uses the arc-cosine kernel, whose Hermite series converges too
    /// slowly for a 1e-6 budget; tabulated activations use direct bivariate
    /// quadrature; everything else sums the Hermite series.
    pub fn c_gamma(&self, gamma: f64) -> f64 {
        let g = gamma.clamp(-1.0, 1.0);
        match &self.kind {
            Nonlinearity::Identity => g,
            Nonlinearity::Relu => {
                let raw = ((1.0 - g * g).max(0.0).sqrt() + g * (PI - g.acos())) / (2.0 * PI);
                (raw - self.shift * self.shift) / (self.scale * self.scale)
            }
            Nonlinearity::Tabulated(_) => self.c_gamma_quadrature(g, QUADRATURE_NODES),
            _ => self.series.iter().rev().fold(0.0, |acc, b| acc * g + b * b),
        }
    }

    /// Direct bivariate evaluation of `c(γ)`: outer rule over `u`, inner
    /// kink-aware rule over the conditional law of `v` given `u`.
    pub fn c_gamma_quadrature(&self, gamma: f64, nodes: usize) -> f64 {
        let g = gamma.clamp(-1.0, 1.0);
        let s = (1.0 - g * g).max(0.0).sqrt();
        let outer = if self.kind.is_smooth() { gauss_hermite(nodes) } else { (*self.rule).clone() };
        let inner = gauss_hermite(nodes);
        outer.expect(|u| {
            let fu = self.eval(u);
            if fu == 0.0 {
                return 0.0;
            }
            fu * self.shifted_expect(g * u, s, &inner, |v| v)
        })
    }

    /// `E[φ(ϱ(m + s w))]` for `w ~ N(0, 1)`; `smooth` is used when the
    /// activation has no kinks, otherwise panels are split at the kinks.
    fn shifted_expect<F: Fn(f64) -> f64>(&self, m: f64, s: f64, smooth: &Rule, phi: F) -> f64 {
        if s <= 1e-300 {
            return phi(self.eval(m));
        }
        if self.kind.is_smooth() {
            return smooth.expect(|w| phi(self.eval(m + s * w)));
        }
        let breaks: Vec<f64> = self.kind.breakpoints().iter().map(|b| (b - m) / s).collect();
        gaussian_piecewise(&breaks, PANEL_WIDTH, PANEL_ORDER).expect(|w| phi(self.eval(m + s * w)))
    }

    /// Normalized Gaussian projections `E_u[ϱ(m + s u) h_ℓ(u)]` for
    /// ℓ = 0..out.len(). ReLU and identity use closed forms.
    pub fn gaussian_projection(&self, m: f64, s: f64, out: &mut [f64]) {
        out.fill(0.0);
        if out.is_empty() {
            return;
        }
        if s <= 1e-300 {
            out[0] = self.eval(m);
            return;
        }
        match &self.kind {
            Nonlinearity::Identity => {
                out[0] = m;
                if out.len() > 1 {
                    out[1] = s;
                }
            }
            Nonlinearity::Relu => relu_projection(m, s, self.shift, self.scale, out),
            Nonlinearity::Tabulated(_) => {
                let breaks: Vec<f64> = self.kind.breakpoints().iter().map(|b| (b - m) / s).collect();
                let rule = gaussian_piecewise(&breaks, PANEL_WIDTH, PANEL_ORDER);
                self.project_with(&rule, m, s, out);
            }
            _ => self.project_with(projection_rule(), m, s, out),
        }
    }

    fn project_with(&self, rule: &Rule, m: f64, s: f64, out: &mut [f64]) {
        let mut buf = [0.0; 32];
        let mut heap;
        let h: &mut [f64] = if out.len() <= buf.len() {
            &mut buf[..out.len()]
        } else {
            heap = vec![0.0; out.len()];
            &mut heap
        };
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let f = w * self.eval(m + s * u);
            hermite_normalized(u, h);
            for (o, hk) in out.iter_mut().zip(h.iter()) {
                *o += f * hk;
            }
        }
    }

    /// `E_u[ϱ(m + s u)²]`.
    pub fn shifted_second_moment(&self, m: f64, s: f64) -> f64 {
        match &self.kind {
            Nonlinearity::Identity => m * m + s * s,
            Nonlinearity::Relu if s > 1e-300 => {
                let r = m / s;
                let (cdf, pdf) = (normal_cdf(r), normal_pdf(r));
                let e1 = m * cdf + s * pdf;
                let e2 = (m * m + s * s) * cdf + m * s * pdf;
                let c = self.shift;
                ((e2 - 2.0 * c * e1 + c * c) / (self.scale * self.scale)).max(0.0)
            }
            _ => self.shifted_expect(m, s, projection_rule(), |v| v * v),
        }
    }

    /// Re-standardizes the already standardized function and returns the
    /// new profile with the residual (shift, scale) it applied.
    pub fn restandardize(&self) -> (Self, f64, f64) {
        let mean = self.rule.expect(|x| self.eval(x));
        let var = self.rule.expect(|x| (self.eval(x) - mean).powi(2));
        let (ds, dc) = if self.is_identity() { (0.0, 1.0) } else { (mean, var.sqrt()) };
        let shift = self.shift + self.scale * ds;
        let scale = self.scale * dc;
        (Self::build(self.kind.clone(), shift, scale, (*self.rule).clone()), ds, dc)
    }
}

/// Standardized ReLU projections: for ℓ ≥ 2, Stein's identity twice gives
/// `E[relu(m + s u) He_ℓ(u)] = s (−1)^ℓ He_{ℓ−2}(r) φ(r)` with r = m/s.
fn relu_projection(m: f64, s: f64, shift: f64, scale: f64, out: &mut [f64]) {
    let r = m / s;
    let (cdf, pdf) = (normal_cdf(r), normal_pdf(r));
    out[0] = (m * cdf + s * pdf - shift) / scale;
    if out.len() > 1 {
        out[1] = s * cdf / scale;
    }
    if out.len() > 2 {
        let mut buf = [0.0; 32];
        let mut heap;
        let h: &mut [f64] = if out.len() - 2 <= buf.len() {
            &mut buf[..out.len() - 2]
        } else {
            heap = vec![0.0; out.len() - 2];
            &mut heap
        };
        hermite_normalized(r, h);
        for l in 2..out.len() {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            let lf = l as f64;
            out[l] = sign * s * pdf * h[l - 2] / (lf * (lf - 1.0)).sqrt() / scale;
        }
    }
}

impl fmt::Display for ActivationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

    #[test]
    fn relu_standardization_matches_closed_form() {
        let p = ActivationProfile::relu();
        assert!((p.shift() - 1.0 / SQRT_2PI).abs() < 1e-13);
        assert!((p.scale() - (0.5 - 1.0 / (2.0 * PI)).sqrt()).abs() < 1e-13);
        // E[g relu(g)] = 1/2.
        assert!((p.mu1() - 0.5 / p.scale()).abs() < 1e-13);
        assert!((p.mu1() - 0.856_36).abs() < 1e-4);
    }

    #[test]
    fn identity_profile_is_trivial() {
        let p = ActivationProfile::identity();
        assert_eq!((p.shift(), p.scale()), (0.0, 1.0));
        assert!((p.mu1() - 1.0).abs() < 1e-13);
        let (a, tail) = p.hermite_coeffs(4);
        let expect = [0.0, 1.0, 0.0, 0.0, 0.0];
        for (x, e) in a.iter().zip(expect) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!(tail.abs() < 1e-12);
    }

    #[test]
    fn weakly_nonlinear_map_coefficients() {
        let p = standardize(Nonlinearity::weakly_nonlinear()).unwrap();
        let norm = (0.975f64.powi(2) + 0.223f64.powi(2)).sqrt();
        assert!(p.shift().abs() < 1e-13);
        assert!((p.scale() - norm).abs() < 1e-12);
        let (a, _) = p.hermite_coeffs(4);
        assert!((a[1] - 0.975 / norm).abs() < 1e-12);
        assert!((a[2] - 0.223 * 2f64.sqrt() / norm).abs() < 1e-12);
        assert!(a[3].abs() < 1e-12 && a[4].abs() < 1e-12);
    }

    #[test]
    fn relu_odd_coefficients_vanish() {
        let p = ActivationProfile::relu();
        let (a, _) = p.hermite_coeffs(8);
        assert!((a[1] - p.mu1()).abs() < 1e-12);
        for k in [3, 5, 7] {
            assert!(a[k].abs() < 1e-12, "alpha_{k} = {}", a[k]);
        }
        // α_k = φ(0) He_{k-2}(0) / scale for even k ≥ 2.
        assert!((a[2] - 1.0 / SQRT_2PI / p.scale()).abs() < 1e-12);
        assert!((a[4] + 1.0 / SQRT_2PI / p.scale()).abs() < 1e-12);
    }

    #[test]
    fn constant_is_rejected() {
        let t = Table::new(vec![-9.0, 9.0], vec![2.0, 2.0]).unwrap();
        assert!(matches!(standardize(Nonlinearity::Tabulated(t)), Err(Error::ConstantActivation(_))));
    }

    #[test]
    fn parse_grammar() {
        assert_eq!("relu".parse::<Nonlinearity>().unwrap(), Nonlinearity::Relu);
        assert_eq!(
            "hermite:[0.975, 0.223]".parse::<Nonlinearity>().unwrap(),
            Nonlinearity::Hermite(vec![0.975, 0.223])
        );
        assert!("sigmoid".parse::<Nonlinearity>().is_err());
        assert!("hermite:[]".parse::<Nonlinearity>().is_err());
        let s = Nonlinearity::Hermite(vec![1.0, 0.5]).to_string();
        assert_eq!(s.parse::<Nonlinearity>().unwrap(), Nonlinearity::Hermite(vec![1.0, 0.5]));
    }

    #[test]
    fn table_interpolates_and_extrapolates() {
        let t = Table::new(vec![-8.0, 0.0, 8.0], vec![0.0, 0.0, 8.0]).unwrap();
        assert_eq!(t.eval(4.0), 4.0);
        assert_eq!(t.eval(10.0), 10.0);
        assert_eq!(t.eval(-10.0), 0.0);
        let p = standardize(Nonlinearity::Tabulated(t)).unwrap();
        let r = ActivationProfile::relu();
        assert!((p.shift() - r.shift()).abs() < 1e-12);
        assert!((p.c_gamma(0.5) - r.c_gamma(0.5)).abs() < 1e-8);
    }

    #[test]
    fn relu_projection_matches_quadrature() {
        let p = ActivationProfile::relu();
        for &(m, s) in &[(0.3, 0.4), (-1.2, 0.7), (2.0, 0.1)] {
            let mut closed = vec![0.0; 7];
            p.gaussian_projection(m, s, &mut closed);
            let breaks = [-m / s];
            let rule = gaussian_piecewise(&breaks, 0.1, 20);
            let mut quad = vec![0.0; 7];
            p.project_with(&rule, m, s, &mut quad);
            for (a, b) in closed.iter().zip(&quad) {
                assert!((a - b).abs() < 1e-12, "({m},{s}): {a} vs {b}");
            }
            let q2 = rule.expect(|u| p.eval(m + s * u).powi(2));
            assert!((p.shifted_second_moment(m, s) - q2).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_sums_to_second_moment() {
        // Parseval: Σ_ℓ E[ϱ(m+su) h_ℓ]² = E[ϱ(m+su)²] for smooth ϱ.
        let p = ActivationProfile::tanh();
        let mut a = vec![0.0; 40];
        p.gaussian_projection(0.4, 0.6, &mut a);
        let sum: f64 = a.iter().map(|x| x * x).sum();
        assert!((sum - p.shifted_second_moment(0.4, 0.6)).abs() < 1e-10);
    }
}
