//! Parameter point of the high-dimensional limit.

use crate::activation::ActivationProfile;
use crate::error::{invalid, Result};

/// Full theory parameter set with the schedule constants and the variance
/// residuals `s²` and `v²` derived from ϱ.
#[derive(Debug, Clone)]
pub struct ModelPoint {
    pub t: f64,
    /// a_t = e^{-t}.
    pub a: f64,
    /// h_t = 1 − a_t², computed from `a` so that a² + h = 1.
    pub h: f64,
    pub lambda: f64,
    pub psi_d: f64,
    pub psi_n: f64,
    pub psi_p: f64,
    pub rho: ActivationProfile,
    pub sigma: ActivationProfile,
    /// c(a²) of ϱ.
    pub c_a2: f64,
    /// s² = 1 − c(a²) − h μ₁².
    pub s2: f64,
    /// v² = c(a²) − a² μ₁².
    pub v2: f64,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {v}")))
    }
}

impl ModelPoint {
    pub fn new(
        t: f64,
        lambda: f64,
        psi_d: f64,
        psi_n: f64,
        psi_p: f64,
        rho: ActivationProfile,
        sigma: ActivationProfile,
    ) -> Result<Self> {
        positive("t", t)?;
        positive("lambda", lambda)?;
        positive("psi_D", psi_d)?;
        positive("psi_n", psi_n)?;
        positive("psi_p", psi_p)?;
        let a = (-t).exp();
        let h = 1.0 - a * a;
        let mu1 = rho.mu1();
        let c_a2 = rho.c_gamma(a * a);
        let s2 = 1.0 - c_a2 - h * mu1 * mu1;
        let v2 = c_a2 - a * a * mu1 * mu1;
        for (name, v) in [("s2", s2), ("v2", v2)] {
            if v < -1e-10 {
                return Err(invalid(name, format!("negative variance residual {v:e}")));
            }
        }
        Ok(Self { t, a, h, lambda, psi_d, psi_n, psi_p, rho, sigma, c_a2, s2: s2.max(0.0), v2: v2.max(0.0) })
    }

    /// μ₁ of the score activation ϱ.
    pub fn mu1(&self) -> f64 {
        self.rho.mu1()
    }

    /// ν₁ of the folding map σ.
    pub fn nu1(&self) -> f64 {
        self.sigma.mu1()
    }

    fn rebuild(&self, t: f64, lambda: f64, psi_d: f64, psi_n: f64, psi_p: f64) -> Result<Self> {
        Self::new(t, lambda, psi_d, psi_n, psi_p, self.rho.clone(), self.sigma.clone())
    }

    pub fn with_t(&self, t: f64) -> Result<Self> {
        self.rebuild(t, self.lambda, self.psi_d, self.psi_n, self.psi_p)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        self.rebuild(self.t, lambda, self.psi_d, self.psi_n, self.psi_p)
    }

    pub fn with_psi_d(&self, psi_d: f64) -> Result<Self> {
        self.rebuild(self.t, self.lambda, psi_d, self.psi_n, self.psi_p)
    }

    pub fn with_psi_n(&self, psi_n: f64) -> Result<Self> {
        self.rebuild(self.t, self.lambda, self.psi_d, psi_n, self.psi_p)
    }

    pub fn with_psi_p(&self, psi_p: f64) -> Result<Self> {
        self.rebuild(self.t, self.lambda, self.psi_d, self.psi_n, psi_p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_and_residuals() {
        let p = ModelPoint::new(0.1, 1e-4, 0.5, 10.0, 2.0, ActivationProfile::relu(), ActivationProfile::identity())
            .unwrap();
        assert_eq!(p.a * p.a + p.h, 1.0);
        let mu = p.mu1();
        assert_eq!(p.s2, 1.0 - p.rho.c_gamma(p.a * p.a) - p.h * mu * mu);
        assert!(p.s2 >= 0.0 && p.v2 >= 0.0);
        assert!(p.with_lambda(0.0).is_err());
        assert!(p.with_t(-1.0).is_err());
    }

    #[test]
    fn identity_activation_has_no_residual_variance() {
        let id = ActivationProfile::identity();
        let p = ModelPoint::new(0.3, 1e-3, 0.5, 2.0, 2.0, id.clone(), id).unwrap();
        assert!(p.s2.abs() < 1e-12 && p.v2.abs() < 1e-12);
    }
}
