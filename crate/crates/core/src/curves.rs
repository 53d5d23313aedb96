//! Asymptotic learning curves: test, train and score errors of the
//! ridge-optimal random-feature score, and the exact-score baseline.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::glm;
use crate::model::ModelPoint;
use crate::solver::{k_derivatives, KDerivatives};

/// Limiting `(1/d) tr (MMᵀ/D − zI)⁻¹` for a d×D Gaussian M with
/// `1/ψ_D = d/D`, atom at zero included. Positive root of
/// `c z s² − (1 − c − z) s + 1 = 0` with `c = 1/ψ_D`.
pub fn mp_stieltjes(z: f64, inv_psi_d: f64) -> Result<f64> {
    if !(z < 0.0) {
        return Err(invalid("z", format!("must be < 0, got {z}")));
    }
    if !(inv_psi_d > 0.0) {
        return Err(invalid("inv_psi_D", format!("must be > 0, got {inv_psi_d}")));
    }
    let c = inv_psi_d;
    let b = 1.0 - c - z;
    // Rationalized root; the product of roots 1/(cz) is negative so this is the positive one.
    Ok(2.0 / (b + (b * b - 4.0 * c * z).sqrt()))
}

/// Asymptotic test error from the resolvent derivatives.
pub fn test_error_from(point: &ModelPoint, kd: &KDerivatives) -> f64 {
    let mu2 = point.mu1().powi(2);
    let h = point.h;
    1.0 - 2.0 * h * mu2 * kd.k - h * mu2 * mu2 * kd.dk_dq + h * mu2 * (1.0 - mu2) * kd.dk_dz
}

/// Asymptotic train error from the resolvent derivatives.
pub fn train_error_from(point: &ModelPoint, kd: &KDerivatives) -> f64 {
    let mu2 = point.mu1().powi(2);
    let h = point.h;
    1.0 - h * mu2 * kd.k - h * point.lambda * mu2 * kd.dk_dz
}

pub fn test_error(point: &ModelPoint) -> Result<f64> {
    Ok(test_error_from(point, &k_derivatives(point)?))
}

pub fn train_error(point: &ModelPoint) -> Result<f64> {
    Ok(train_error_from(point, &k_derivatives(point)?))
}

/// Exact-score test error for linear σ: `1 − (h/a²) s_MP(−h/a², 1/ψ_D)`.
pub fn exact_test_error_linear(point: &ModelPoint) -> Result<f64> {
    if !point.sigma.is_identity() {
        return Err(Error::Unsupported("closed-form exact score needs sigma = identity".into()));
    }
    Ok(exact_linear(point.a, point.h, point.psi_d))
}

fn exact_linear(a: f64, h: f64, psi_d: f64) -> f64 {
    let r = h / (a * a);
    1.0 - r * mp_stieltjes(-r, 1.0 / psi_d).expect("-h/a^2 < 0")
}

/// Exact-score test error through the replica MMSE: `(a²/h)·mmse_per_d`.
pub fn exact_test_error_glm(point: &ModelPoint) -> Result<f64> {
    let mmse = glm::mmse_per_d(point.t, point.psi_d, &point.sigma)?;
    Ok(point.a * point.a / point.h * mmse)
}

/// How the exact-score baseline was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    MpClosedForm,
    GlmReplica,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::MpClosedForm => "mp-closed-form",
            BaselineMethod::GlmReplica => "glm-replica",
        }
    }
}

/// Exact-score test error with the method chosen from σ.
pub fn exact_test_error(point: &ModelPoint) -> Result<(f64, BaselineMethod)> {
    if point.sigma.is_identity() {
        Ok((exact_test_error_linear(point)?, BaselineMethod::MpClosedForm))
    } else {
        Ok((exact_test_error_glm(point)?, BaselineMethod::GlmReplica))
    }
}

/// Score error `(e_test − e*_test)/h`. Negative values down to −1e-6 are
/// finite-difference noise and clamp to zero with a warning.
pub fn score_error(e_test: f64, e_test_star: f64, h: f64) -> f64 {
    let e = (e_test - e_test_star) / h;
    if e < 0.0 {
        if e < -1e-6 {
            log::warn!("score error {e:e} is below the clamping threshold");
            return e;
        }
        log::warn!("clamping score error {e:e} to 0");
        return 0.0;
    }
    e
}

/// All asymptotic errors at one parameter point.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub point: ModelPoint,
    pub e_test: f64,
    pub e_train: f64,
    pub e_test_star: f64,
    pub e_score: f64,
    pub baseline_method: BaselineMethod,
    /// Residual norm of the base solve.
    pub residual: f64,
}

impl CurvePoint {
    pub fn compute(point: &ModelPoint) -> Result<Self> {
        let baseline = exact_test_error(point)?;
        Self::with_baseline(point, baseline)
    }

    /// Assemble with a precomputed baseline; the baseline depends only on
    /// (t, ψ_D, σ), so sweeps over ψ_n, ψ_p and λ can share it.
    pub fn with_baseline(point: &ModelPoint, (e_test_star, baseline_method): (f64, BaselineMethod)) -> Result<Self> {
        let kd = k_derivatives(point)?;
        let e_test = test_error_from(point, &kd);
        let e_train = train_error_from(point, &kd);
        Ok(Self {
            point: point.clone(),
            e_test,
            e_train,
            e_test_star,
            e_score: score_error(e_test, e_test_star, point.h),
            baseline_method,
            residual: kd.residual,
        })
    }
}

/// Outcome of a sample-complexity scan.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleComplexity {
    /// Smallest grid ψ_n meeting the threshold, `None` when none does.
    pub psi_n: Option<f64>,
    /// Whether every larger grid ψ_n also meets it.
    pub stable: bool,
    /// `max_t h_t² e_score` per grid ψ_n.
    pub worst: Vec<f64>,
}

/// Smallest ψ_n on an ascending grid with `max_{t ∈ t_grid} h_t² e_score < ε`.
///
/// A plain scan rather than bisection: the score error is not monotone in
/// ψ_n near the interpolation peak.
pub fn sample_complexity(
    base: &ModelPoint,
    epsilon: f64,
    t_grid: &[f64],
    psi_n_grid: &[f64],
) -> Result<SampleComplexity> {
    if t_grid.is_empty() || psi_n_grid.is_empty() {
        return Err(invalid("grid", "t and psi_n grids must be nonempty"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    if psi_n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("psi_n grid", "must be strictly ascending"));
    }
    let baselines = t_grid.iter().map(|&t| exact_test_error(&base.with_t(t)?)).collect::<Result<Vec<_>>>()?;
    let mut worst = Vec::with_capacity(psi_n_grid.len());
    for &psi_n in psi_n_grid {
        let mut w = f64::NEG_INFINITY;
        for (&t, &bl) in t_grid.iter().zip(&baselines) {
            let p = base.with_t(t)?.with_psi_n(psi_n)?;
            let c = CurvePoint::with_baseline(&p, bl)?;
            w = w.max(p.h * p.h * c.e_score);
        }
        worst.push(w);
    }
    let first = worst.iter().position(|&w| w < epsilon);
    let stable = first.is_some_and(|i| worst[i..].iter().all(|&w| w < epsilon));
    Ok(SampleComplexity { psi_n: first.map(|i| psi_n_grid[i]), stable, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationProfile;

    fn point(t: f64, lambda: f64) -> ModelPoint {
        ModelPoint::new(t, lambda, 0.5, 10.0, 2.0, ActivationProfile::relu(), ActivationProfile::identity()).unwrap()
    }

    #[test]
    fn stieltjes_large_argument() {
        for c in [0.5, 1.0, 4.0] {
            let s = mp_stieltjes(-1e6, c).unwrap();
            assert!((s - 1e-6).abs() < 1e-8);
        }
        assert!(mp_stieltjes(0.0, 1.0).is_err());
    }

    #[test]
    fn stieltjes_solves_its_quadratic() {
        let (z, c) = (-0.2214, 2.0);
        let s = mp_stieltjes(z, c).unwrap();
        assert!((c * z * s * s - (1.0 - c - z) * s + 1.0).abs() < 1e-14);
    }

    #[test]
    fn exact_linear_limits() {
        let id = ActivationProfile::identity();
        let late = ModelPoint::new(12.0, 1e-4, 0.5, 10.0, 2.0, id.clone(), id.clone()).unwrap();
        assert!(exact_test_error_linear(&late).unwrap() < 1e-9);
        let early = ModelPoint::new(1e-6, 1e-4, 0.5, 10.0, 2.0, id.clone(), id).unwrap();
        assert!((exact_test_error_linear(&early).unwrap() - 0.5).abs() < 1e-3);
    }

    #[test]
    fn decomposition_is_exact() {
        let c = CurvePoint::compute(&point(0.1, 1e-4)).unwrap();
        assert!((c.e_test - (c.point.h * c.e_score + c.e_test_star)).abs() < 1e-12);
        assert!(c.e_test >= c.e_train - 1e-8);
    }

    #[test]
    fn degenerate_limits() {
        let small_t = point(1e-6, 1e-4);
        assert!((test_error(&small_t).unwrap() - 1.0).abs() < 1e-4);
        assert!((train_error(&small_t).unwrap() - 1.0).abs() < 1e-4);
        let big_ridge = point(0.1, 1e8);
        assert!((test_error(&big_ridge).unwrap() - 1.0).abs() < 1e-4);
        assert!((train_error(&big_ridge).unwrap() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn sample_complexity_extremes() {
        let p = point(0.1, 1e-4);
        let grid = [1.0, 2.0, 4.0];
        let easy = sample_complexity(&p, 10.0, &[0.1], &grid).unwrap();
        assert_eq!(easy.psi_n, Some(1.0));
        assert!(easy.stable);
        let hard = sample_complexity(&p, 1e-12, &[0.1], &grid).unwrap();
        assert_eq!(hard.psi_n, None);
    }
}
