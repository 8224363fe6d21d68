//! Source-space covariance assembly, sensor covariance estimation, and the
//! matrix-normal density used by the structured channel prior.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leadfield::field::LeadField;

pub const CHOLESKY_JITTER_REL: f64 = 1e-8;

/// Cholesky factorization that retries once with `1e-8 * mean(diag)` added to
/// the diagonal before giving up.
pub fn cholesky_with_jitter(
    m: &DMatrix<f64>,
    context: &'static str,
) -> Result<Cholesky<f64, Dyn>> {
    if let Some(ch) = m.clone().cholesky() {
        return Ok(ch);
    }
    let jitter = CHOLESKY_JITTER_REL * m.trace() / m.nrows() as f64;
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += jitter;
    }
    jittered.cholesky().ok_or(Error::NotPositiveDefinite { context })
}

/// Per-region rank contributions `sum_{s in r} L_s L_s^T`, precomputed so the
/// source covariance and its scale gradients are cheap inside the fit loop.
#[derive(Debug, Clone)]
pub struct RegionProjections {
    pub projections: Vec<DMatrix<f64>>,
}

impl RegionProjections {
    pub fn from_leadfield(lf: &LeadField) -> Self {
        let c = lf.n_channels();
        let mut projections = vec![DMatrix::zeros(c, c); lf.region_count];
        for s in 0..lf.n_vertices() {
            let block = lf.vertex_block(s);
            projections[lf.region_of_vertex[s]] += &block * block.transpose();
        }
        RegionProjections { projections }
    }

    pub fn region_count(&self) -> usize {
        self.projections.len()
    }

    /// `noise_cov + sum_r gamma_r^2 P_r`.
    pub fn spatial_covariance(
        &self,
        region_scales: &[f64],
        noise_cov: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        if region_scales.len() != self.projections.len() {
            return Err(Error::DomainError(format!(
                "expected {} region scales, got {}",
                self.projections.len(),
                region_scales.len()
            )));
        }
        let mut cov = noise_cov.clone();
        for (g, p) in region_scales.iter().zip(&self.projections) {
            cov += p * (g * g);
        }
        Ok(cov)
    }
}

pub fn build_spatial_covariance(
    lf: &LeadField,
    region_scales: &[f64],
    noise_cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    RegionProjections::from_leadfield(lf).spatial_covariance(region_scales, noise_cov)
}

/// Population covariance of row-sample matrix `x` (n x C), centered per column.
pub fn population_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::DomainError(
            "covariance estimation needs at least 2 samples".into(),
        ));
    }
    let c = x.ncols();
    let mut centered = x.clone();
    for j in 0..c {
        let mean = centered.column(j).mean();
        for i in 0..n {
            centered[(i, j)] -= mean;
        }
    }
    Ok(centered.transpose() * &centered / n as f64)
}

/// `(1 - lambda) * cov + lambda * diag(cov)`.
pub fn shrink_covariance(cov: &DMatrix<f64>, shrinkage: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::InvalidConfig(format!(
            "shrinkage must lie in [0, 1], got {shrinkage}"
        )));
    }
    let mut out = cov * (1.0 - shrinkage);
    for i in 0..cov.nrows() {
        out[(i, i)] = cov[(i, i)];
    }
    Ok(out)
}

/// Shrunk sensor covariance of pooled post-stimulus samples (rows).
pub fn estimate_data_covariance(samples: &DMatrix<f64>, shrinkage: f64) -> Result<DMatrix<f64>> {
    shrink_covariance(&population_covariance(samples)?, shrinkage)
}

/// Maps activation patterns to extraction weights: solves `data_cov W = A`.
pub fn haufe_weights(data_cov: &DMatrix<f64>, patterns: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if data_cov.nrows() != data_cov.ncols() || data_cov.nrows() != patterns.nrows() {
        return Err(Error::ShapeMismatch {
            modality: "haufe".into(),
            expected: format!("{0} x {0} covariance", patterns.nrows()),
            found: format!("{} x {}", data_cov.nrows(), data_cov.ncols()),
        });
    }
    let ch = cholesky_with_jitter(data_cov, "data covariance")?;
    Ok(ch.solve(patterns))
}

/// Sensor covariance bundle carried in a fitted artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    /// Diagonal-plus-low-rank noise covariance from pre-stimulus samples.
    pub noise_cov: Vec<Vec<f64>>,
    /// Shrunk post-stimulus covariance used for the weight mapping.
    pub data_cov: Vec<Vec<f64>>,
    pub shrinkage: f64,
}

impl CovarianceEstimate {
    pub fn noise_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.noise_cov)
    }

    pub fn data_matrix(&self) -> DMatrix<f64> {
        rows_to_matrix(&self.data_cov)
    }
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

#[derive(Debug, Clone)]
pub struct MatrixNormalTerms {
    pub value: f64,
    /// d value / d A.
    pub grad_a: DMatrix<f64>,
    /// Symmetric M with d value = <M, dSigma_U> for symmetric perturbations.
    pub grad_sigma_u: DMatrix<f64>,
    /// Same for the column covariance.
    pub grad_sigma_v: DMatrix<f64>,
}

/// Log-density of a zero-mean matrix normal with row covariance `sigma_u`
/// (C x C) and column covariance `sigma_v` (K x K), evaluated without ever
/// forming the CK x CK Kronecker covariance.
pub fn matrix_normal_logdensity(
    a: &DMatrix<f64>,
    sigma_u: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
) -> Result<f64> {
    let (c, k) = (a.nrows(), a.ncols());
    check_matrix_normal_shapes(a, sigma_u, sigma_v)?;
    let chol_u = cholesky_with_jitter(sigma_u, "row covariance")?;
    let chol_v = cholesky_with_jitter(sigma_v, "column covariance")?;
    let logdet_u: f64 = chol_u.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let logdet_v: f64 = chol_v.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let half = chol_u.l().solve_lower_triangular(a).ok_or(Error::NotPositiveDefinite {
        context: "row covariance",
    })?;
    let whitened = chol_v
        .l()
        .solve_lower_triangular(&half.transpose())
        .ok_or(Error::NotPositiveDefinite {
            context: "column covariance",
        })?;
    let quad = whitened.norm_squared();
    Ok(-0.5 * (c * k) as f64 * crate::priors::LN_2PI
        - 0.5 * k as f64 * logdet_u
        - 0.5 * c as f64 * logdet_v
        - 0.5 * quad)
}

/// Log-density plus the gradients needed to backpropagate through `A` and
/// through covariances built from scale hyperparameters.
pub fn matrix_normal_grad_terms(
    a: &DMatrix<f64>,
    sigma_u: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
) -> Result<MatrixNormalTerms> {
    let (c, k) = (a.nrows(), a.ncols());
    check_matrix_normal_shapes(a, sigma_u, sigma_v)?;
    let chol_u = cholesky_with_jitter(sigma_u, "row covariance")?;
    let chol_v = cholesky_with_jitter(sigma_v, "column covariance")?;
    let logdet_u: f64 = chol_u.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let logdet_v: f64 = chol_v.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();

    let u_inv = chol_u.inverse();
    let v_inv = chol_v.inverse();
    let u_inv_a = &u_inv * a;
    let u_inv_a_v_inv = &u_inv_a * &v_inv;
    let quad = (a.transpose() * &u_inv_a_v_inv).trace();

    let value = -0.5 * (c * k) as f64 * crate::priors::LN_2PI
        - 0.5 * k as f64 * logdet_u
        - 0.5 * c as f64 * logdet_v
        - 0.5 * quad;

    let grad_a = -&u_inv_a_v_inv;
    let grad_sigma_u = &u_inv * (-0.5 * k as f64) + &u_inv_a_v_inv * u_inv_a.transpose() * 0.5;
    let a_v_inv = a * &v_inv;
    let grad_sigma_v = &v_inv * (-0.5 * c as f64) + u_inv_a_v_inv.transpose() * a_v_inv * 0.5;

    Ok(MatrixNormalTerms {
        value,
        grad_a,
        grad_sigma_u,
        grad_sigma_v,
    })
}

fn check_matrix_normal_shapes(
    a: &DMatrix<f64>,
    sigma_u: &DMatrix<f64>,
    sigma_v: &DMatrix<f64>,
) -> Result<()> {
    let (c, k) = (a.nrows(), a.ncols());
    if sigma_u.nrows() != c || sigma_u.ncols() != c || sigma_v.nrows() != k || sigma_v.ncols() != k
    {
        return Err(Error::ShapeMismatch {
            modality: "matrix normal".into(),
            expected: format!("{c} x {c} row and {k} x {k} column covariance"),
            found: format!(
                "{} x {} and {} x {}",
                sigma_u.nrows(),
                sigma_u.ncols(),
                sigma_v.nrows(),
                sigma_v.ncols()
            ),
        });
    }
    Ok(())
}
