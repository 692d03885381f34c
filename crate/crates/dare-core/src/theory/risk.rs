//! Analytic excess risk under the latent linear model.
//!
//! A predictor scoring `β̂ᵀWx + c` on a test environment `x = Aε`,
//! `ε = ε₀ + b`, misses the Bayes score `β*ᵀε` by `vᵀε + c` where
//! `v = AᵀWβ̂ − β*`. With `E[ε₀ε₀ᵀ] = I` the expected squared miss is
//! `‖v‖² + (vᵀb + c)²`. For symmetric `A = Σ_test^{1/2}` this is the familiar
//! `‖(Δ+I)β̂ − β*‖² + (((Δ+I)β̂ − β*)ᵀb)²` with `Δ = Σ_test^{1/2}W − I`.

use serde::{Deserialize, Serialize};

use crate::envmodel::{EnvironmentSpec, GroundTruth};
use crate::error::{DareError, Result};
use crate::matops::{inv_sqrt_psd, range_projector, spectral_norm, sqrt_psd, sym_eig, Mat, Vector, DEFAULT_REL_TOL};
use crate::seeding::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub analytic_excess: f64,
    pub mc_excess: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub sup_formula: Option<f64>,
    /// Spectral norm of `Δ`.
    pub delta_norm: f64,
    /// Spectral norm of `Π − Π̂` when known.
    pub subspace_error: Option<f64>,
}

impl RiskReport {
    /// Distance between the analytic and Monte-Carlo values in standard errors.
    pub fn mc_z_score(&self) -> Option<f64> {
        match (self.mc_excess, self.mc_stderr) {
            (Some(m), Some(s)) if s > 0.0 => Some((m - self.analytic_excess).abs() / s),
            (Some(m), Some(_)) => Some(if m == self.analytic_excess { 0.0 } else { f64::INFINITY }),
            _ => None,
        }
    }
}

/// `Δ = Σ_test^{1/2} Σ̄^{-1/2} − I`.
pub fn delta_matrix(sigma_test: &Mat, sigma_bar: &Mat) -> Result<Mat> {
    if sigma_test.shape() != sigma_bar.shape() {
        return Err(DareError::DimMismatch(format!(
            "Σ_test is {:?}, Σ̄ is {:?}",
            sigma_test.shape(),
            sigma_bar.shape()
        )));
    }
    let d = sigma_test.nrows();
    if sigma_test == sigma_bar {
        // Σ^{1/2}Σ^{-1/2} is the range projector; return it without product rounding.
        let eig = sym_eig(sigma_bar)?;
        let cutoff = DEFAULT_REL_TOL * eig.values.amax();
        if eig.values.iter().all(|&v| v > cutoff) {
            return Ok(Mat::zeros(d, d));
        }
        return Ok(range_projector(sigma_bar, DEFAULT_REL_TOL)? - Mat::identity(d, d));
    }
    Ok(sqrt_psd(sigma_test)? * inv_sqrt_psd(sigma_bar, DEFAULT_REL_TOL)? - Mat::identity(d, d))
}

/// `Δ` from a mixing map and a test-time whitener directly: `AW − I`.
pub fn delta_from_whitener(a_test: &Mat, whitener: &Mat) -> Mat {
    let d = a_test.nrows();
    a_test * whitener - Mat::identity(d, d)
}

fn residual_direction(beta_hat: &Vector, whitener: &Mat, spec: &EnvironmentSpec, truth: &GroundTruth) -> Vector {
    spec.a.transpose() * (whitener * beta_hat) - &truth.beta_star
}

/// Exact excess risk of `x ↦ β̂ᵀWx + bias` on `spec`.
pub fn analytic_excess(
    beta_hat: &Vector,
    bias: f64,
    whitener: &Mat,
    spec: &EnvironmentSpec,
    truth: &GroundTruth,
) -> f64 {
    let v = residual_direction(beta_hat, whitener, spec, truth);
    let shift = v.dot(&spec.b) + bias;
    v.norm_squared() + shift * shift
}

fn check_dims(beta_hat: &Vector, whitener: &Mat, spec: &EnvironmentSpec, truth: &GroundTruth) -> Result<()> {
    let d = spec.dim();
    if beta_hat.len() != d || whitener.shape() != (d, d) || truth.beta_star.len() != d || spec.b.len() != d {
        return Err(DareError::DimMismatch(format!(
            "β̂ {}, W {:?}, A {:?}, b {}, β* {}",
            beta_hat.len(),
            whitener.shape(),
            spec.a.shape(),
            spec.b.len(),
            truth.beta_star.len()
        )));
    }
    Ok(())
}

/// Monte-Carlo estimate of the same quantity: mean and standard error over `n` draws.
pub fn mc_excess(
    beta_hat: &Vector,
    bias: f64,
    whitener: &Mat,
    spec: &EnvironmentSpec,
    truth: &GroundTruth,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_dims(beta_hat, whitener, spec, truth)?;
    if n < 2 {
        return Err(DareError::InvalidArgument("Monte-Carlo needs n ≥ 2".into()));
    }
    let d = spec.dim();
    // score on x = Aε is (AᵀWβ̂)ᵀε, compared with β*ᵀε
    let w_eff = spec.a.transpose() * (whitener * beta_hat);
    let mut rng = rng_from_seed(seed);
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for _ in 0..n {
        let mut miss = bias;
        for j in 0..d {
            let e = crate::envmodel::draw_residual(spec.residual_law, &mut rng) + spec.b[j];
            miss += (w_eff[j] - truth.beta_star[j]) * e;
        }
        let sq = miss * miss;
        sum += sq;
        sumsq += sq * sq;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sumsq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok((mean, (var / nf).sqrt()))
}

/// Risk report for `β̂` scored through the test-time whitener `W = Σ̄^{-1/2}`.
pub fn excess_risk_linear(
    beta_hat: &Vector,
    whitener: &Mat,
    spec: &EnvironmentSpec,
    truth: &GroundTruth,
    mc: Option<(usize, u64)>,
) -> Result<RiskReport> {
    check_dims(beta_hat, whitener, spec, truth)?;
    let analytic = analytic_excess(beta_hat, 0.0, whitener, spec, truth);
    let (mc_excess, mc_stderr) = match mc {
        Some((n, seed)) => {
            let (m, s) = mc_excess(beta_hat, 0.0, whitener, spec, truth, n, seed)?;
            (Some(m), Some(s))
        }
        None => (None, None),
    };
    Ok(RiskReport {
        analytic_excess: analytic,
        mc_excess,
        mc_stderr,
        sup_formula: None,
        delta_norm: spectral_norm(&delta_from_whitener(&spec.a, whitener)),
        subspace_error: None,
    })
}

/// Worst-case excess risk of the DARE solution over the constrained test set:
/// `(1+ρ²)(‖β*‖² + 2B‖Π̂β*‖‖(I−Π̂)β*‖)`.
pub fn adversarial_sup_risk(beta_star: &Vector, pi_hat: &Mat, rho: f64, b_bound: f64) -> f64 {
    let inside = pi_hat * beta_star;
    let outside = beta_star - &inside;
    (1.0 + rho * rho) * (beta_star.norm_squared() + 2.0 * b_bound * inside.norm() * outside.norm())
}

/// `‖Ŵ − W‖_F² / ‖W‖_F²`.
pub fn whitener_error(w_hat: &Mat, w: &Mat) -> Result<f64> {
    if w_hat.shape() != w.shape() {
        return Err(DareError::DimMismatch("whiteners differ in shape".into()));
    }
    let denom = w.norm_squared();
    if !(denom > 0.0) {
        return Err(DareError::InvalidArgument("reference whitener is zero".into()));
    }
    Ok((w_hat - w).norm_squared() / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn delta_examples() {
        let d = delta_matrix(&(Mat::identity(3, 3) * 4.0), &Mat::identity(3, 3)).unwrap();
        assert_abs_diff_eq!(d, Mat::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn sup_formula_examples() {
        let beta = Vector::from_vec(vec![1.0, 1.0]);
        let pi = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        assert_abs_diff_eq!(adversarial_sup_risk(&beta, &pi, 1.0, 0.5), 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(adversarial_sup_risk(&beta, &pi, 0.0, 0.0), 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(adversarial_sup_risk(&beta, &Mat::identity(2, 2), 2.0, 0.7), 10.0, epsilon = 1e-14);
    }

    #[test]
    fn whitener_error_examples() {
        let w = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        assert_eq!(whitener_error(&w, &w).unwrap(), 0.0);
        assert_abs_diff_eq!(whitener_error(&(&w * 2.0), &w).unwrap(), 1.0, epsilon = 1e-15);
        assert!(whitener_error(&w, &Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_predictor_risk_is_beta_norm() {
        let spec = EnvironmentSpec::new("t", Mat::identity(3, 3) * 2.0, Vector::zeros(3));
        let truth = GroundTruth::regression(Vector::from_vec(vec![1.0, -2.0, 0.5]), 0.1);
        let r = excess_risk_linear(&Vector::zeros(3), &Mat::identity(3, 3), &spec, &truth, None).unwrap();
        assert_abs_diff_eq!(r.analytic_excess, 5.25, epsilon = 1e-14);
    }
}
