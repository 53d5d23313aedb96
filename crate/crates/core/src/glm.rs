//! Replica-symmetric free energy of the hidden-manifold denoising channel
//! `y = a σ(Mξ/√D) + √h z`, its saddle point, and the resulting MMSE.
//!
//! Free energies are per latent dimension D:
//! `f_RS(q, r) = φ(r) + Ψ(q)/ψ_D − rq/2`. The inner minimum over r sits at
//! `r = q/(1 − q)`, which turns the per-ambient-dimension objective into
//! `F(q) = ψ_D (q/2 + ½ log(1 − q)) + Ψ(q)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::activation::ActivationProfile;
use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss_hermite, Rule};

/// Gauss-Hermite nodes for the outer expectation over V.
const V_NODES: usize = 80;
/// Pre-scan size for the outer maximization.
const PRESCAN: usize = 64;
/// Search variable s = −log(1 − q) ranges over [0, S_MAX]; q ≤ 1 − 1e-9.
const S_MAX: f64 = 20.723_265_836_946_41;
/// Half-width (in standard deviations) of the trapezoid windows.
const WINDOW: f64 = 9.0;

fn v_rule() -> &'static Rule {
    static RULE: OnceLock<Rule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(V_NODES))
}

/// `φ(r) = r/2 − ½ log(1 + r)`.
pub fn phi_r(r: f64) -> f64 {
    assert!(r >= 0.0, "phi_r needs r >= 0");
    0.5 * r - 0.5 * r.ln_1p()
}

/// `φ(r)` from its integral definition
/// `E_{X₀,Z₀} log ∫ N(w) exp(r w X₀ + √r w Z₀ − r w²/2) dw`, with the
/// inner integral done numerically. Used to cross-check [`phi_r`].
pub fn phi_r_integral(r: f64) -> f64 {
    assert!(r >= 0.0, "phi_r needs r >= 0");
    let outer = gauss_hermite(40);
    let sr = r.sqrt();
    outer.expect(|x0| {
        outer.expect(|z0| {
            let b = r * x0 + sr * z0;
            let centre = b / (1.0 + r);
            let width = 1.0 / (1.0 + r).sqrt();
            log_trapezoid(centre, width, |w| b * w - 0.5 * (1.0 + r) * w * w - 0.5 * (2.0 * PI).ln())
        })
    })
}

/// `log ∫ exp(g(w)) dw` by the trapezoid rule on `centre ± 12·width`
/// with spacing `width/4`, accumulated with log-sum-exp.
fn log_trapezoid<F: Fn(f64) -> f64>(centre: f64, width: f64, g: F) -> f64 {
    let dw = 0.25 * width;
    let n = 48;
    let vals: Vec<f64> = (-n..=n).map(|k| g(centre + k as f64 * dw)).collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + (vals.iter().map(|v| (v - m).exp()).sum::<f64>() * dw).ln()
}

/// Signal amplitude `a` and noise variance `h` at SNR `η = a/√h` with a² + h = 1.
pub fn schedule_from_eta(eta: f64) -> (f64, f64) {
    let h = 1.0 / (1.0 + eta * eta);
    (eta * h.sqrt(), h)
}

/// Ψ(q) at time t: `E log p(Y₀ | V)` with
/// `p(y | V) = ∫ N(w) N(y; a σ(√q V + √(1−q) w), h) dw`.
pub fn psi_q(q: f64, t: f64, sigma: &ActivationProfile) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be > 0, got {t}")));
    }
    let a = (-t).exp();
    psi_q_ah(q, a, 1.0 - a * a, sigma)
}

/// Ψ(q) for explicit (a, h).
///
/// For each V node the conditional density `I(y) = p(y | V)` is tabulated
/// on a trapezoid grid in y and `∫ I log I dy` is accumulated; the inner
/// w-integral is a trapezoid rule whose spacing resolves the narrowest
/// feature of `w ↦ N(y; aσ(u(w)), h)`. All spacings are continuous in
/// (a, h), so Ψ is smooth in η up to exponentially small terms.
pub fn psi_q_ah(q: f64, a: f64, h: f64, sigma: &ActivationProfile) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid("q", format!("must lie in [0, 1], got {q}")));
    }
    if !(h > 0.0) {
        return Err(invalid("h", format!("must be > 0, got {h}")));
    }
    let sq = q.sqrt();
    let sc = (1.0 - q).max(0.0).sqrt();
    let sh = h.sqrt();
    let norm = -0.5 * (2.0 * PI * h).ln();
    let inv_2h = 0.5 / h;
    let mut total = 0.0;
    let mut sig = Vec::new();
    let mut wts = Vec::new();
    for (&v, &wv) in v_rule().nodes.iter().zip(&v_rule().weights) {
        // Narrowest feature in w: width √h / (a √(1−q) |σ'|).
        let slope = max_slope(sigma, sq * v, sc);
        let resolve = if a * sc * slope > 0.0 { 0.8 * sh / (a * sc * slope) } else { f64::INFINITY };
        let dw = resolve.min(0.5);
        let nw = (WINDOW / dw).floor() as i64;
        sig.clear();
        wts.clear();
        for k in -nw..=nw {
            let w = k as f64 * dw;
            sig.push(a * sigma.eval(sq * v + sc * w));
            wts.push(dw * (-0.5 * w * w).exp() / (2.0 * PI).sqrt());
        }
        let (lo, hi) = sig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &s| (l.min(s), u.max(s)));
        let dy = 0.5 * sh;
        let ky_lo = ((lo - WINDOW * sh) / dy).floor() as i64;
        let ky_hi = ((hi + WINDOW * sh) / dy).ceil() as i64;
        let mut acc = 0.0;
        for ky in ky_lo..=ky_hi {
            let y = ky as f64 * dy;
            let mut dens_y = 0.0;
            for (&s, &w) in sig.iter().zip(&wts) {
                let e = y - s;
                dens_y += w * (-(e * e) * inv_2h).exp();
            }
            if !dens_y.is_finite() {
                return Err(Error::Quadrature { v, y });
            }
            if dens_y > 0.0 {
                // I = dens_y · N-normalization; I log I with log I = log dens_y + norm.
                let i = dens_y * norm.exp();
                acc += i * (dens_y.ln() + norm);
            }
        }
        total += wv * acc * dy;
    }
    Ok(total)
}

/// Upper bound of |σ'| over the w-window at fixed V, by a fine scan.
fn max_slope(sigma: &ActivationProfile, centre: f64, sc: f64) -> f64 {
    if sc == 0.0 {
        return 0.0;
    }
    let eps = 1e-4;
    let n = 72;
    let mut best: f64 = 0.0;
    for k in -n..=n {
        let u = centre + sc * WINDOW * k as f64 / n as f64;
        let d = (sigma.eval(u + eps) - sigma.eval(u - eps)) / (2.0 * eps);
        best = best.max(d.abs());
    }
    best.max(1e-3)
}

/// Closed form of Ψ(q) for linear σ: `−½ log(2π(1 − a² q)) − ½`.
pub fn psi_q_linear(q: f64, a: f64, h: f64) -> f64 {
    -0.5 * (2.0 * PI * (h + a * a * (1.0 - q))).ln() - 0.5
}

/// Outer objective per ambient dimension.
fn objective(q: f64, a: f64, h: f64, psi_d: f64, sigma: &ActivationProfile) -> Result<f64> {
    Ok(psi_d * (0.5 * q + 0.5 * (-q).ln_1p()) + psi_q_ah(q, a, h, sigma)?)
}

/// Saddle point of the replica-symmetric free energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaddlePoint {
    pub q_star: f64,
    pub r_star: f64,
    /// Free energy per latent dimension D.
    pub f_star: f64,
    pub eta: f64,
    /// True when the maximum sits at the end of the search range.
    pub boundary: bool,
    /// Bracket in s = −log(1 − q) used by the golden-section stage.
    bracket: (f64, f64),
}

fn q_of(s: f64) -> f64 {
    -(-s).exp_m1()
}

/// Saddle at time t.
pub fn saddle(t: f64, psi_d: f64, sigma: &ActivationProfile) -> Result<SaddlePoint> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be > 0, got {t}")));
    }
    let a = (-t).exp();
    saddle_eta(a / (1.0 - a * a).sqrt(), psi_d, sigma)
}

/// Saddle at SNR η.
pub fn saddle_eta(eta: f64, psi_d: f64, sigma: &ActivationProfile) -> Result<SaddlePoint> {
    if !(psi_d > 0.0) {
        return Err(invalid("psi_D", format!("must be > 0, got {psi_d}")));
    }
    if !(eta >= 0.0) {
        return Err(invalid("eta", format!("must be >= 0, got {eta}")));
    }
    let (a, h) = schedule_from_eta(eta);
    let f = |s: f64| objective(q_of(s), a, h, psi_d, sigma);
    let grid: Vec<f64> = (0..PRESCAN).map(|i| S_MAX * i as f64 / (PRESCAN - 1) as f64).collect();
    let vals = grid.iter().map(|&s| f(s)).collect::<Result<Vec<_>>>()?;
    let local: Vec<usize> = (0..PRESCAN)
        .filter(|&i| {
            let left = i == 0 || vals[i] >= vals[i - 1];
            let right = i + 1 == PRESCAN || vals[i] >= vals[i + 1];
            left && right
        })
        .collect();
    if local.len() > 1 {
        log::info!(
            "free energy has {} local maxima in q at eta = {eta}: {:?}",
            local.len(),
            local.iter().map(|&i| q_of(grid[i])).collect::<Vec<_>>()
        );
    }
    let best = local.iter().copied().max_by(|&i, &j| vals[i].total_cmp(&vals[j])).expect("pre-scan has a maximum");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(PRESCAN - 1)];
    finish_saddle(eta, a, h, psi_d, sigma, (lo, hi))
}

/// Saddle at η searched only inside a known bracket in s.
fn saddle_in(eta: f64, psi_d: f64, sigma: &ActivationProfile, bracket: (f64, f64)) -> Result<SaddlePoint> {
    let (a, h) = schedule_from_eta(eta);
    finish_saddle(eta, a, h, psi_d, sigma, bracket)
}

fn finish_saddle(
    eta: f64,
    a: f64,
    h: f64,
    psi_d: f64,
    sigma: &ActivationProfile,
    (lo, hi): (f64, f64),
) -> Result<SaddlePoint> {
    let f = |s: f64| objective(q_of(s), a, h, psi_d, sigma);
    let (s, val) = golden_max(f, lo, hi, 1e-9)?;
    let q = q_of(s);
    let boundary = s <= 1e-8 || s >= S_MAX - 1e-8;
    let r = q / (1.0 - q);
    Ok(SaddlePoint { q_star: q, r_star: r, f_star: val / psi_d, eta, boundary, bracket: (lo, hi) })
}

/// Golden-section maximization on [lo, hi]; returns (argmax, max).
fn golden_max<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        }
    }
    let (fl, fh) = (f(lo)?, f(hi)?);
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for cand in [(lo, fl), (hi, fh)] {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    Ok(best)
}

/// MMSE per ambient dimension with both derivative estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmseEstimate {
    pub mmse: f64,
    pub eta: f64,
    pub saddle: SaddlePoint,
    /// g'(η) by central differences of g = ψ_D f* (re-optimized saddles).
    pub g_prime: f64,
    /// ∂F/∂η at the frozen saddle.
    pub g_prime_envelope: f64,
    pub step: f64,
}

/// (1/d) MMSE(x | y) at time t.
pub fn mmse_per_d(t: f64, psi_d: f64, sigma: &ActivationProfile) -> Result<f64> {
    Ok(mmse_details(t, psi_d, sigma)?.mmse)
}

/// MMSE at time t with derivative diagnostics.
pub fn mmse_details(t: f64, psi_d: f64, sigma: &ActivationProfile) -> Result<MmseEstimate> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("must be > 0, got {t}")));
    }
    let a = (-t).exp();
    mmse_eta(a / (1.0 - a * a).sqrt(), psi_d, sigma)
}

/// MMSE at SNR η: `(√h/a)(a√h − g'(η))` with g' by central differences of
/// the re-optimized free energy, step 1e-4·max(1, η) validated by halving,
/// and cross-checked against the envelope derivative at the frozen saddle.
pub fn mmse_eta(eta: f64, psi_d: f64, sigma: &ActivationProfile) -> Result<MmseEstimate> {
    if !(eta > 0.0) {
        return Err(invalid("eta", format!("must be > 0, got {eta}")));
    }
    let base = saddle_eta(eta, psi_d, sigma)?;
    let g_at = |e: f64| -> Result<f64> { Ok(psi_d * saddle_in(e, psi_d, sigma, base.bracket)?.f_star) };
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-300);
    let mut step = 1e-4 * eta.max(1.0);
    let mut accepted = None;
    let mut last = (0.0, 0.0);
    for _ in 0..3 {
        let coarse = (g_at(eta + step)? - g_at(eta - step)?) / (2.0 * step);
        let half = 0.5 * step;
        let fine = (g_at(eta + half)? - g_at(eta - half)?) / (2.0 * half);
        // The relative check is meaningless once g' is at the noise floor.
        if rel(coarse, fine) <= 1e-4 || (coarse - fine).abs() < 1e-9 {
            accepted = Some(fine);
            break;
        }
        last = (coarse, fine);
        step /= 10.0;
    }
    let g_prime = accepted.ok_or(Error::DerivativeUnstable { what: "dg/deta", coarse: last.0, fine: last.1 })?;
    let envelope = envelope_derivative(eta, psi_d, sigma, base.q_star, 1e-4 * eta.max(1.0))?;
    if rel(g_prime, envelope) > 1e-3 && (g_prime - envelope).abs() > 1e-8 {
        return Err(Error::EnvelopeMismatch { fd: g_prime, envelope });
    }
    let (a, h) = schedule_from_eta(eta);
    let mmse = (h.sqrt() / a) * (a * h.sqrt() - g_prime);
    Ok(MmseEstimate { mmse, eta, saddle: base, g_prime, g_prime_envelope: envelope, step })
}

/// ∂/∂η of the per-d objective at frozen q; only Ψ depends on η there.
fn envelope_derivative(eta: f64, _psi_d: f64, sigma: &ActivationProfile, q: f64, step: f64) -> Result<f64> {
    let psi = |e: f64| {
        let (a, h) = schedule_from_eta(e);
        psi_q_ah(q, a, h, sigma)
    };
    Ok((psi(eta + step)? - psi(eta - step)?) / (2.0 * step))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_closed_form_values() {
        assert_eq!(phi_r(0.0), 0.0);
        assert!((phi_r(1.0) - (0.5 - 0.5 * 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn phi_integral_matches_closed_form() {
        for r in [0.5, 1.0, 2.0, 5.0] {
            assert!((phi_r_integral(r) - phi_r(r)).abs() < 1e-8, "r = {r}");
        }
    }

    #[test]
    fn psi_linear_closed_form() {
        let id = ActivationProfile::identity();
        for t in [0.05f64, 0.5] {
            let a = (-t).exp();
            let h = 1.0 - a * a;
            for q in [0.0, 0.3, 0.7, 0.99, 1.0] {
                let num = psi_q(q, t, &id).unwrap();
                assert!((num - psi_q_linear(q, a, h)).abs() < 1e-7, "t={t} q={q}");
            }
        }
    }

    #[test]
    fn psi_at_q_one_is_pure_noise_entropy() {
        let s = ActivationProfile::tanh();
        let t = 0.2f64;
        let h = 1.0 - (-2.0 * t).exp();
        let v = psi_q(1.0, t, &s).unwrap();
        assert!((v - (-0.5 * (2.0 * PI * h).ln() - 0.5)).abs() < 1e-7);
    }

    #[test]
    fn no_signal_makes_psi_flat() {
        let s = ActivationProfile::tanh();
        let v0 = psi_q(0.0, 12.0, &s).unwrap();
        let v1 = psi_q(0.8, 12.0, &s).unwrap();
        assert!((v0 - v1).abs() < 1e-7);
    }
}
