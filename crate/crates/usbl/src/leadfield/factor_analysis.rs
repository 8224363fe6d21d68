//! Maximum-likelihood factor analysis for the sensor noise covariance.
//!
//! Pre-stimulus samples are modeled as `x = B z + e` with isotropic latent
//! factors and diagonal residual variance, giving the diagonal-plus-low-rank
//! noise covariance `diag(psi) + B B^T`.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::leadfield::covariance::population_covariance;
use crate::priors::LN_2PI;

const INIT_SEED: u64 = 0x0fa5_eed;
const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct FactorAnalysisResult {
    /// `diag(uniquenesses) + loadings * loadings^T`.
    pub covariance: DMatrix<f64>,
    /// C x n_factors loading matrix (empty for n_factors = 0).
    pub loadings: DMatrix<f64>,
    pub uniquenesses: DVector<f64>,
    /// Log-likelihood before each EM update, then once after the last.
    pub loglik_trace: Vec<f64>,
    /// False when the iteration budget ran out before the trace flattened.
    pub converged: bool,
}

/// Fits `diag(psi) + B B^T` to the sample covariance of `prestim_samples`
/// (rows are observations) by EM. Deterministic: the loading init uses a
/// fixed internal seed.
pub fn estimate_noise_covariance(
    prestim_samples: &DMatrix<f64>,
    n_factors: usize,
    em_iters: usize,
) -> Result<FactorAnalysisResult> {
    let n = prestim_samples.nrows();
    let c = prestim_samples.ncols();
    if n <= c {
        return Err(Error::DomainError(format!(
            "noise covariance estimation needs more samples than channels ({n} <= {c})"
        )));
    }
    if n_factors >= c {
        return Err(Error::DomainError(format!(
            "n_factors must be below the channel count ({n_factors} >= {c})"
        )));
    }
    let s = population_covariance(prestim_samples)?;
    let mean_var = s.trace() / c as f64;
    if !(mean_var > 0.0) {
        return Err(Error::DomainError(
            "pre-stimulus samples have zero variance".into(),
        ));
    }
    let psi_floor = 1e-10 * mean_var;

    if n_factors == 0 {
        let uniquenesses = s.diagonal();
        let covariance = DMatrix::from_diagonal(&uniquenesses);
        let loglik = gaussian_loglik(n, &covariance, &s)?;
        return Ok(FactorAnalysisResult {
            covariance,
            loadings: DMatrix::zeros(c, 0),
            uniquenesses,
            loglik_trace: vec![loglik],
            converged: true,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(INIT_SEED);
    let init_scale = 0.01 * mean_var.sqrt();
    let mut b = DMatrix::from_fn(c, n_factors, |_, _| {
        init_scale * rng.sample::<f64, _>(StandardNormal)
    });
    let mut psi: DVector<f64> = s.diagonal().map(|v| v.max(psi_floor));

    let mut trace: Vec<f64> = Vec::with_capacity(em_iters + 1);
    let mut converged = false;
    for _ in 0..em_iters {
        let phi = &b * b.transpose() + DMatrix::from_diagonal(&psi);
        let loglik = gaussian_loglik(n, &phi, &s)?;
        if let Some(&prev) = trace.last() {
            debug_assert!(
                loglik >= prev - 1e-7 * (1.0 + prev.abs()),
                "EM log-likelihood decreased: {prev} -> {loglik}"
            );
            if (loglik - prev).abs() <= REL_TOL * (1.0 + loglik.abs()) {
                trace.push(loglik);
                converged = true;
                break;
            }
        }
        trace.push(loglik);

        let chol = phi
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { context: "factor analysis" })?;
        // beta = B^T Phi^{-1}, shaped q x C.
        let beta = chol.solve(&b).transpose();
        let czz = DMatrix::identity(n_factors, n_factors) - &beta * &b
            + &beta * &s * beta.transpose();
        let cxz = &s * beta.transpose();
        let czz_chol = czz
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { context: "factor analysis" })?;
        let b_new = czz_chol.solve(&cxz.transpose()).transpose();
        let resid = &s - &b_new * cxz.transpose();
        psi = resid.diagonal().map(|v| v.max(psi_floor));
        b = b_new;
    }
    if !converged {
        let phi = &b * b.transpose() + DMatrix::from_diagonal(&psi);
        trace.push(gaussian_loglik(n, &phi, &s)?);
    }

    let covariance = &b * b.transpose() + DMatrix::from_diagonal(&psi);
    Ok(FactorAnalysisResult {
        covariance,
        loadings: b,
        uniquenesses: psi,
        loglik_trace: trace,
        converged,
    })
}

/// `-n/2 [C log 2pi + log|Phi| + tr(Phi^{-1} S)]`.
fn gaussian_loglik(n: usize, phi: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let c = phi.nrows();
    let chol = phi
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { context: "factor analysis" })?;
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let trace_term = chol.solve(s).trace();
    Ok(-0.5 * n as f64 * (c as f64 * LN_2PI + logdet + trace_term))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn draw_samples(
        rng: &mut ChaCha20Rng,
        n: usize,
        variances: &[f64],
        factor: Option<&DVector<f64>>,
    ) -> DMatrix<f64> {
        let c = variances.len();
        let mut x = DMatrix::zeros(n, c);
        for i in 0..n {
            let shared: f64 = rng.sample(StandardNormal);
            for j in 0..c {
                let noise: f64 = rng.sample(StandardNormal);
                let mut v = variances[j].sqrt() * noise;
                if let Some(u) = factor {
                    v += shared * u[j];
                }
                x[(i, j)] = v;
            }
        }
        x
    }

    #[test]
    fn pure_diagonal_noise_yields_small_loadings() {
        // Variances well above 1: the spurious-loading norm from Wishart
        // sampling noise grows like sqrt(var) while the acceptance threshold
        // grows like var, so the bound is only meaningful in this regime.
        let mut rng = ChaCha20Rng::seed_from_u64(100);
        let variances = [5.0, 6.5, 8.0, 9.0, 10.5, 12.0];
        let x = draw_samples(&mut rng, 10_000, &variances, None);
        let fit = estimate_noise_covariance(&x, 2, 200).unwrap();
        let mean_psi = fit.uniquenesses.mean();
        for col in 0..fit.loadings.ncols() {
            assert!(
                fit.loadings.column(col).norm() < 0.1 * mean_psi,
                "loading column norm {} vs mean psi {}",
                fit.loadings.column(col).norm(),
                mean_psi
            );
        }
        for (got, want) in fit.uniquenesses.iter().zip(variances) {
            assert!((got - want).abs() < 0.1 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn single_strong_factor_is_recovered() {
        let mut rng = ChaCha20Rng::seed_from_u64(101);
        let variances = [0.3, 0.3, 0.3, 0.3, 0.3];
        let u = DVector::from_column_slice(&[1.5, -1.0, 0.8, 1.2, -0.6]);
        let x = draw_samples(&mut rng, 10_000, &variances, Some(&u));
        let fit = estimate_noise_covariance(&x, 1, 500).unwrap();
        let b = fit.loadings.column(0);
        let cosine = b.dot(&u) / (b.norm() * u.norm());
        assert!(cosine.abs() > 0.95, "cosine {cosine}");
    }

    #[test]
    fn zero_factors_returns_sample_variances() {
        let mut rng = ChaCha20Rng::seed_from_u64(102);
        let x = draw_samples(&mut rng, 50, &[1.0, 2.0, 0.5], None);
        let fit = estimate_noise_covariance(&x, 0, 10).unwrap();
        let expected = population_covariance(&x).unwrap().diagonal();
        assert_eq!(fit.uniquenesses, expected);
        assert!(fit.converged);
        assert_eq!(fit.loadings.ncols(), 0);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(fit.covariance[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn loglik_trace_is_monotone() {
        let mut rng = ChaCha20Rng::seed_from_u64(103);
        let u = DVector::from_column_slice(&[1.0, 0.5, -0.5, 0.2]);
        let x = draw_samples(&mut rng, 500, &[0.4, 0.6, 0.5, 0.7], Some(&u));
        let fit = estimate_noise_covariance(&x, 2, 100).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-7 * (1.0 + w[0].abs()),
                "{} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn tiny_budget_reports_non_convergence() {
        let mut rng = ChaCha20Rng::seed_from_u64(104);
        let u = DVector::from_column_slice(&[1.0, -1.0, 1.0]);
        let x = draw_samples(&mut rng, 200, &[0.5, 0.5, 0.5], Some(&u));
        let fit = estimate_noise_covariance(&x, 1, 2).unwrap();
        assert!(!fit.converged);
        assert!(fit.covariance.clone().cholesky().is_some());
        assert_eq!(fit.loglik_trace.len(), 3);
    }

    #[test]
    fn converged_fit_flattens_and_stays_positive_definite() {
        let mut rng = ChaCha20Rng::seed_from_u64(105);
        let u = DVector::from_column_slice(&[0.9, 0.9, -0.9, 0.4]);
        let x = draw_samples(&mut rng, 2000, &[0.5, 0.4, 0.6, 0.5], Some(&u));
        let fit = estimate_noise_covariance(&x, 1, 2000).unwrap();
        assert!(fit.converged);
        assert!(fit.covariance.clone().cholesky().is_some());
        assert!(fit.uniquenesses.iter().all(|&p| p > 0.0));
        let model = &fit.loadings * fit.loadings.transpose()
            + DMatrix::from_diagonal(&fit.uniquenesses);
        assert_abs_diff_eq!(fit.covariance, model, epsilon = 1e-12);
    }

    #[test]
    fn shape_preconditions_are_enforced() {
        let x = DMatrix::zeros(3, 3);
        assert!(estimate_noise_covariance(&x, 1, 10).is_err());
        let x = DMatrix::from_fn(10, 3, |i, j| (i * 3 + j) as f64);
        assert!(estimate_noise_covariance(&x, 3, 10).is_err());
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let mut rng = ChaCha20Rng::seed_from_u64(106);
        let x = draw_samples(&mut rng, 300, &[1.0, 0.7, 0.9], None);
        let a = estimate_noise_covariance(&x, 1, 50).unwrap();
        let b = estimate_noise_covariance(&x, 1, 50).unwrap();
        assert_eq!(a.covariance, b.covariance);
        assert_eq!(a.loglik_trace, b.loglik_trace);
    }
}
