//! Self-consistent equations for the resolvent traces ζ₁..ζ₄ and the
//! trace functional K(q, z) built from them.
//!
//! With χ = 1 + a²μ₁²ζ₁ + v²ζ₂ the κ-constants are
//!
//! ```text
//! κ₁ = a²(μ₁²/χ + q)   κ₂ = h(μ₁² + q)   κ₃ = s² − z + v²/χ
//! κ₄ = 1/(κ₁ν₁²)       κ₅ = (κ₁(1 − ν₁²) + κ₂ + κ₃(1 + ζ₃)/ψ_p)/(κ₁ν₁²)
//! ```
//!
//! and `K(q, z) = κ₄ ψ_D ζ₄`.

use crate::error::{Error, Result};
use crate::model::ModelPoint;

/// Solver tolerance on the max-abs residual.
pub const TOLERANCE: f64 = 1e-10;
const POLISH_THRESHOLD: f64 = 1e-4;
const MAX_DAMPED_ITERATIONS: usize = 100_000;
const MAX_NEWTON_STEPS: usize = 200;
const POLE_EPS: f64 = 1e-14;

/// How a solution was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Damped fixed-point iteration followed by Newton polish.
    Damped,
    /// Bracketed scalar solve in χ followed by Newton polish.
    ChiBracket,
}

/// Solution of the self-consistent equations at one spectral point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zetas {
    pub zeta1: f64,
    pub zeta2: f64,
    pub zeta3: f64,
    pub zeta4: f64,
    pub chi: f64,
    pub residual_norm: f64,
    pub method: Method,
}

impl Zetas {
    pub fn as_array(&self) -> [f64; 4] {
        [self.zeta1, self.zeta2, self.zeta3, self.zeta4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSet {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub kappa5: f64,
}

/// Model constants the equations depend on.
#[derive(Debug, Clone, Copy)]
struct Consts {
    a2: f64,
    h: f64,
    mu2: f64,
    nu2: f64,
    s2: f64,
    v2: f64,
    psi_d: f64,
    psi_n: f64,
    psi_p: f64,
}

impl Consts {
    fn new(p: &ModelPoint) -> Result<Self> {
        let mu = p.mu1();
        let nu = p.nu1();
        if mu.abs() < 1e-12 {
            return Err(Error::DegenerateActivation("mu1 = 0: kappa4 has a pole at q = 0"));
        }
        if nu.abs() < 1e-12 {
            return Err(Error::DegenerateActivation("nu1 = 0: kappa4 is undefined"));
        }
        Ok(Self {
            a2: p.a * p.a,
            h: p.h,
            mu2: mu * mu,
            nu2: nu * nu,
            s2: p.s2,
            v2: p.v2,
            psi_d: p.psi_d,
            psi_n: p.psi_n,
            psi_p: p.psi_p,
        })
    }

    fn chi(&self, x: &[f64; 4]) -> f64 {
        1.0 + self.a2 * self.mu2 * x[0] + self.v2 * x[1]
    }

    /// κ₁..κ₃ and κ₄ as functions of χ alone.
    fn kappa123(&self, chi: f64, q: f64, z: f64) -> (f64, f64, f64, f64) {
        let k1 = self.a2 * (self.mu2 / chi + q);
        let k2 = self.h * (self.mu2 + q);
        let k3 = self.s2 - z + self.v2 / chi;
        (k1, k2, k3, 1.0 / (k1 * self.nu2))
    }

    fn kappa5(&self, k1: f64, k2: f64, k3: f64, zeta3: f64) -> f64 {
        (k1 * (1.0 - self.nu2) + k2 + k3 * (1.0 + zeta3) / self.psi_p) / (k1 * self.nu2)
    }

    fn kappas(&self, x: &[f64; 4], q: f64, z: f64) -> Result<KappaSet> {
        let chi = self.chi(x);
        if chi.abs() < POLE_EPS {
            return Err(Error::Pole("chi = 0"));
        }
        let (k1, k2, k3, k4) = self.kappa123(chi, q, z);
        if k1.abs() < POLE_EPS {
            return Err(Error::Pole("kappa1 = 0"));
        }
        Ok(KappaSet { kappa1: k1, kappa2: k2, kappa3: k3, kappa4: k4, kappa5: self.kappa5(k1, k2, k3, x[2]) })
    }

    fn residuals(&self, x: &[f64; 4], q: f64, z: f64) -> Result<[f64; 4]> {
        if (1.0 + x[3]).abs() < POLE_EPS {
            return Err(Error::Pole("1 + zeta4 = 0"));
        }
        let k = self.kappas(x, q, z)?;
        let (pd, pn, pp) = (self.psi_d, self.psi_n, self.psi_p);
        let tau = (1.0 + x[2]) / pp;
        let r1 =
            pn * k.kappa1 * k.kappa1 * x[0] + pd * x[3] * k.kappa2 / self.nu2 + pd * x[3] * k.kappa3 * tau / self.nu2
                - k.kappa1;
        let r2 = tau - tau * tau * pd * k.kappa3 * k.kappa4 * x[3] - x[2];
        let r3 = k.kappa1 * pn * x[0] + k.kappa2 * k.kappa4 * pd * x[3] + k.kappa3 * pn * x[1] - pp;
        let r4 = pd * x[3] / (1.0 + x[3]) + pd * x[3] * k.kappa5 - 1.0;
        Ok([r1, r2, r3, r4])
    }

    /// One sweep of the fixed-point rewrites, each equation solved for its own ζ.
    fn fixed_point_map(&self, x: &[f64; 4], q: f64, z: f64) -> Result<[f64; 4]> {
        let k = self.kappas(x, q, z)?;
        let (pd, pn, pp) = (self.psi_d, self.psi_n, self.psi_p);
        let tau = (1.0 + x[2]) / pp;
        let z1 = (k.kappa1 - pd * x[3] * k.kappa2 / self.nu2 - pd * x[3] * k.kappa3 * tau / self.nu2)
            / (pn * k.kappa1 * k.kappa1);
        let z2 = (pp - k.kappa1 * pn * x[0] - k.kappa2 * k.kappa4 * pd * x[3]) / (k.kappa3 * pn);
        let z3 = tau - tau * tau * pd * k.kappa3 * k.kappa4 * x[3];
        let z4 = 1.0 / (pd * (1.0 / (1.0 + x[3]) + k.kappa5));
        Ok([z1, z2, z3, z4])
    }

    /// Given χ, solves the (ζ₃, ζ₄) pair exactly and returns all four ζ
    /// from the remaining equations.
    fn given_chi(&self, chi: f64, q: f64, z: f64) -> Option<[f64; 4]> {
        let (k1, k2, k3, k4) = self.kappa123(chi, q, z);
        if !(k1 > 0.0 && k3 > 0.0) {
            return None;
        }
        let pd = self.psi_d;
        let pp = self.psi_p;
        // ζ₄ is the positive root of ψ_Dκ₅ζ² + (ψ_D(1 + κ₅) − 1)ζ − 1 = 0.
        let zeta4 = |z3: f64| {
            let k5 = self.kappa5(k1, k2, k3, z3);
            let b = pd * (1.0 + k5) - 1.0;
            2.0 / (b + (b * b + 4.0 * pd * k5).sqrt())
        };
        let g = |z3: f64| {
            let tau = (1.0 + z3) / pp;
            tau - tau * tau * pd * k3 * k4 * zeta4(z3) - z3
        };
        let mut lo = 0.0;
        if g(lo) <= 0.0 {
            lo = -1.0 + 1e-12;
        }
        let mut hi = (k1 + k2) / k3 + 1.0;
        let mut guard = 0;
        while g(hi) > 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 200 {
                return None;
            }
        }
        let z3 = brent(g, lo, hi, 1e-15)?;
        let z4 = zeta4(z3);
        let tau = (1.0 + z3) / pp;
        let z1 = (k1 - pd * z4 * k2 / self.nu2 - pd * z4 * k3 * tau / self.nu2) / (self.psi_n * k1 * k1);
        let z2 = (pp - k1 * self.psi_n * z1 - k2 * k4 * pd * z4) / (k3 * self.psi_n);
        Some([z1, z2, z3, z4])
    }
}

fn max_abs(r: &[f64; 4]) -> f64 {
    r.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Brent's root finder on a sign-changing bracket.
pub(crate) fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..500 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Some(b)
}

/// Left-hand sides of the four self-consistent equations.
pub fn residuals(zetas: &[f64; 4], point: &ModelPoint, q: f64, z: f64) -> Result<[f64; 4]> {
    Consts::new(point)?.residuals(zetas, q, z)
}

/// κ-constants at a given ζ.
pub fn kappas(zetas: &[f64; 4], point: &ModelPoint, q: f64, z: f64) -> Result<KappaSet> {
    Consts::new(point)?.kappas(zetas, q, z)
}

/// The starting point ζ₁ = ζ₂ = ψ_p/ψ_n, ζ₃ = 1, ζ₄ = 1/ψ_D.
pub fn default_init(point: &ModelPoint) -> [f64; 4] {
    let r = point.psi_p / point.psi_n;
    [r, r, 1.0, 1.0 / point.psi_d]
}

/// Solves the equations at (q, z), z < 0, on the physical branch.
///
/// Runs damped fixed-point iteration from [`default_init`]; if it diverges or
/// leaves the positive branch, falls back to a bracketed scalar solve in χ.
pub fn solve_zetas(point: &ModelPoint, q: f64, z: f64) -> Result<Zetas> {
    if !(z < 0.0) {
        return Err(crate::error::invalid("z", format!("spectral argument must be negative, got {z}")));
    }
    if !(q >= 0.0) {
        return Err(crate::error::invalid("q", format!("must be >= 0, got {q}")));
    }
    solve_unchecked(point, q, z)
}

/// Solver entry without the sign preconditions on (q, z); used for the
/// two-sided finite differences around q = 0 and small |z|.
pub(crate) fn solve_unchecked(point: &ModelPoint, q: f64, z: f64) -> Result<Zetas> {
    let c = Consts::new(point)?;
    match damped(&c, default_init(point), q, z) {
        Ok(s) => Ok(s),
        Err(e) => {
            log::debug!("damped iteration failed ({e}); using chi bracket");
            chi_bracket(&c, q, z)
        }
    }
}

/// Damped iteration from a caller-supplied start, without fallback.
pub fn solve_zetas_from(point: &ModelPoint, q: f64, z: f64, init: [f64; 4]) -> Result<Zetas> {
    damped(&Consts::new(point)?, init, q, z)
}

/// Bracketed scalar solve in χ, without the damped stage.
pub fn solve_zetas_bracketed(point: &ModelPoint, q: f64, z: f64) -> Result<Zetas> {
    chi_bracket(&Consts::new(point)?, q, z)
}

fn on_branch(c: &Consts, x: &[f64; 4], q: f64, z: f64) -> bool {
    let chi = c.chi(x);
    let (k1, _, k3, _) = c.kappa123(chi, q, z);
    x.iter().all(|v| v.is_finite()) && x[1] > 0.0 && x[3] > 0.0 && chi > 0.0 && k1 > 0.0 && k3 > 0.0
}

fn damped(c: &Consts, init: [f64; 4], q: f64, z: f64) -> Result<Zetas> {
    let mut omega = 0.5;
    let mut last_res = f64::INFINITY;
    for _restart in 0..4 {
        let mut x = init;
        let mut res = max_abs(&c.residuals(&x, q, z)?);
        let mut w = omega;
        let mut it = 0;
        let mut violated = false;
        while it < MAX_DAMPED_ITERATIONS && res >= POLISH_THRESHOLD {
            it += 1;
            let t = c.fixed_point_map(&x, q, z)?;
            let cand: [f64; 4] = std::array::from_fn(|i| (1.0 - w) * x[i] + w * t[i]);
            if !on_branch(c, &cand, q, z) {
                violated = true;
                break;
            }
            let r = max_abs(&c.residuals(&cand, q, z)?);
            if !r.is_finite() {
                violated = true;
                break;
            }
            if r > res {
                w *= 0.5;
                if w < 1e-6 {
                    break;
                }
            }
            x = cand;
            res = r;
        }
        last_res = res;
        if violated {
            omega *= 0.25;
            continue;
        }
        if res >= POLISH_THRESHOLD {
            break;
        }
        return polish(c, x, q, z, Method::Damped);
    }
    Err(Error::NoConvergence { residual: last_res, iterations: MAX_DAMPED_ITERATIONS })
}

fn chi_bracket(c: &Consts, q: f64, z: f64) -> Result<Zetas> {
    let f = |chi: f64| match c.given_chi(chi, q, z) {
        Some(x) => c.chi(&x) - chi,
        None => f64::NAN,
    };
    // F(χ) > 0 near χ = 1 and F → −∞ as χ grows; bracket in log χ.
    let mut lo = 1.0;
    if !(f(lo) > 0.0) {
        lo = 1e-6;
    }
    let mut hi = 2.0;
    let mut guard = 0;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 4.0;
        guard += 1;
        if guard > 100 {
            return Err(Error::NoConvergence { residual: f64::NAN, iterations: guard });
        }
    }
    let g = |u: f64| f(u.exp());
    let u = brent(g, lo.ln(), hi.ln(), 1e-15).ok_or(Error::NoConvergence { residual: f64::NAN, iterations: 0 })?;
    let x = c.given_chi(u.exp(), q, z).ok_or(Error::NoConvergence { residual: f64::NAN, iterations: 0 })?;
    polish(c, x, q, z, Method::ChiBracket)
}

/// Newton polish with a central-difference Jacobian and backtracking.
fn polish(c: &Consts, mut x: [f64; 4], q: f64, z: f64, method: Method) -> Result<Zetas> {
    let mut r = c.residuals(&x, q, z)?;
    let mut res = max_abs(&r);
    let mut stall = 0;
    for _ in 0..MAX_NEWTON_STEPS {
        if res < 1e-15 {
            break;
        }
        let mut jac = [[0.0; 4]; 4];
        for j in 0..4 {
            let step = 1e-7 * x[j].abs().max(1e-3);
            let mut xp = x;
            let mut xm = x;
            xp[j] += step;
            xm[j] -= step;
            let rp = c.residuals(&xp, q, z)?;
            let rm = c.residuals(&xm, q, z)?;
            for i in 0..4 {
                jac[i][j] = (rp[i] - rm[i]) / (2.0 * step);
            }
        }
        let Some(dx) = solve4(jac, r.map(|v| -v)) else { break };
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand: [f64; 4] = std::array::from_fn(|i| x[i] + alpha * dx[i]);
            if let Ok(rc) = c.residuals(&cand, q, z) {
                let rn = max_abs(&rc);
                if rn.is_finite() && rn < res && on_branch(c, &cand, q, z) {
                    x = cand;
                    r = rc;
                    res = rn;
                    improved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !improved {
            stall += 1;
            if stall > 2 {
                break;
            }
        }
    }
    if !(res < TOLERANCE) || !on_branch(c, &x, q, z) {
        return Err(Error::NoConvergence { residual: res, iterations: MAX_NEWTON_STEPS });
    }
    Ok(Zetas { zeta1: x[0], zeta2: x[1], zeta3: x[2], zeta4: x[3], chi: c.chi(&x), residual_norm: res, method })
}

/// Gaussian elimination with partial pivoting on a 4×4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 || !a[piv][col].is_finite() {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn k_from(point: &ModelPoint, q: f64, zetas: &Zetas) -> f64 {
    let mu2 = point.mu1().powi(2);
    let nu2 = point.nu1().powi(2);
    point.psi_d * zetas.zeta4 / (nu2 * point.a * point.a * (mu2 / zetas.chi + q))
}

/// K(q, z) = ψ_Dζ₄ / (ν₁²a²(μ₁²/χ + q)).
pub fn k_value(point: &ModelPoint, q: f64, z: f64) -> Result<f64> {
    let s = solve_zetas(point, q, z)?;
    Ok(k_from(point, q, &s))
}

fn k_unchecked(point: &ModelPoint, q: f64, z: f64) -> Result<f64> {
    let s = solve_unchecked(point, q, z)?;
    Ok(k_from(point, q, &s))
}

/// K and its partial derivatives at (0, −λ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KDerivatives {
    pub k: f64,
    pub dk_dq: f64,
    pub dk_dz: f64,
    /// Finite-difference step that passed the step-halving check.
    pub step: f64,
    /// Residual norm of the base solve.
    pub residual: f64,
    /// Largest relative difference between the δ and δ/2 estimates.
    pub agreement: f64,
}

/// Central finite differences of K at (0, −λ), validated by step halving.
///
/// The base z-step is 1e-5·max(1, λ) and the q-step 1e-5 (q is an O(1)
/// overlap, so scaling it with λ would leave the physical branch); when the
/// δ and δ/2 estimates differ by more than 1e-4 relative, both steps shrink
/// tenfold (twice at most).
pub fn k_derivatives(point: &ModelPoint) -> Result<KDerivatives> {
    let lam = point.lambda;
    let base = solve_zetas(point, 0.0, -lam)?;
    let k = k_from(point, 0.0, &base);
    let mut delta = 1e-5 * lam.max(1.0);
    let mut delta_q = 1e-5;
    let mut last = None;
    for _ in 0..3 {
        let dq =
            |d: f64| -> Result<f64> { Ok((k_unchecked(point, d, -lam)? - k_unchecked(point, -d, -lam)?) / (2.0 * d)) };
        let dz = |d: f64| -> Result<f64> {
            Ok((k_unchecked(point, 0.0, -lam + d)? - k_unchecked(point, 0.0, -lam - d)?) / (2.0 * d))
        };
        let (q1, q2) = (dq(delta_q)?, dq(0.5 * delta_q)?);
        let (z1, z2) = (dz(delta)?, dz(0.5 * delta)?);
        // Below the rounding floor of the difference quotient the relative test is void.
        let agree = |a: f64, b: f64, d: f64| {
            (a - b).abs() <= 1e-4 * a.abs().max(b.abs()) || (a - b).abs() <= 1e3 * f64::EPSILON * k.abs() / d
        };
        if agree(q1, q2, delta_q) && agree(z1, z2, delta) {
            let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
            let agreement = rel(q1, q2).max(rel(z1, z2));
            return Ok(KDerivatives { k, dk_dq: q2, dk_dz: z2, step: delta, residual: base.residual_norm, agreement });
        }
        last = Some(if !agree(q1, q2, delta_q) { ("dK/dq", q1, q2) } else { ("dK/dz", z1, z2) });
        delta /= 10.0;
        delta_q /= 10.0;
    }
    let (what, coarse, fine) = last.expect("loop ran");
    Err(Error::DerivativeUnstable { what, coarse, fine })
}
