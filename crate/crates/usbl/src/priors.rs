//! Structured priors: grouped horseshoe, Gaussian random walk, and the
//! half-distribution hyperpriors.
//!
//! Every log-density includes its normalizing constant, so dual-path checks
//! (telescoping GRW vs. full multivariate normal) compare exactly rather than
//! up to a constant. Gradient companions are provided for the terms the model
//! differentiates through.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837877066409345483560659472811;

/// log N(x; 0, sd^2), constant included.
pub fn normal_logdensity(x: f64, sd: f64) -> f64 {
    -0.5 * LN_2PI - sd.ln() - 0.5 * (x / sd) * (x / sd)
}

/// Grouped horseshoe factors for one modality: W = global * diag(local) * raw.
#[derive(Debug, Clone, PartialEq)]
pub struct HorseshoeParams {
    pub global_scale: f64,
    pub local_scales: DVector<f64>,
    pub raw_weights: DMatrix<f64>,
}

pub fn assemble_horseshoe_weights(hs: &HorseshoeParams) -> Result<DMatrix<f64>> {
    if hs.local_scales.len() != hs.raw_weights.nrows() {
        return Err(Error::DomainError(format!(
            "horseshoe local scales ({}) do not match raw weight rows ({})",
            hs.local_scales.len(),
            hs.raw_weights.nrows()
        )));
    }
    if hs.global_scale <= 0.0 || hs.local_scales.iter().any(|&l| l <= 0.0) {
        return Err(Error::DomainError(
            "horseshoe scales must be strictly positive".into(),
        ));
    }
    let mut w = hs.raw_weights.clone();
    for c in 0..w.nrows() {
        let s = hs.global_scale * hs.local_scales[c];
        for k in 0..w.ncols() {
            w[(c, k)] *= s;
        }
    }
    Ok(w)
}

/// Random-walk scales: a free intercept spread and an innovation spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrwParams {
    pub intercept_scale: f64,
    pub innovation_scale: f64,
}

/// Dense covariance of a length-`k` random walk,
/// `cov[i,j] = sigma0^2 + sigma_i^2 * min(i,j)` with 1-indexed i, j.
pub fn grw_covariance(k: usize, sigma0: f64, sigma_i: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| {
        sigma0 * sigma0 + sigma_i * sigma_i * (i.min(j) + 1) as f64
    })
}

/// Telescoped random-walk log-density, exactly the multivariate normal under
/// [`grw_covariance`]:
/// `log N(row[0]; 0, sigma0^2 + sigma_i^2) + sum_k log N(row[k]-row[k-1]; 0, sigma_i^2)`.
///
/// The first point already carries one innovation, matching the covariance
/// `sigma0^2 11' + sigma_i^2 JJ'` whose (1,1) entry is `sigma0^2 + sigma_i^2`.
pub fn grw_logdensity(row: &[f64], grw: &GrwParams) -> Result<f64> {
    Ok(grw_logdensity_grad(row, grw)?.0)
}

/// Value, gradient w.r.t. the row, and gradient w.r.t. the innovation scale.
pub fn grw_logdensity_grad(row: &[f64], grw: &GrwParams) -> Result<(f64, DVector<f64>, f64)> {
    if row.is_empty() {
        return Err(Error::DomainError("random-walk row must be nonempty".into()));
    }
    if grw.intercept_scale <= 0.0 || grw.innovation_scale <= 0.0 {
        return Err(Error::DomainError(
            "random-walk scales must be strictly positive".into(),
        ));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "random-walk row",
            step: None,
        });
    }
    let s0 = grw.intercept_scale;
    let si = grw.innovation_scale;
    let k = row.len();
    let head_var = s0 * s0 + si * si;
    let mut value = normal_logdensity(row[0], head_var.sqrt());
    let mut grad = DVector::zeros(k);
    grad[0] = -row[0] / head_var;
    let mut grad_si = -si / head_var + row[0] * row[0] * si / (head_var * head_var);
    for i in 1..k {
        let d = row[i] - row[i - 1];
        value += normal_logdensity(d, si);
        let g = -d / (si * si);
        grad[i] += g;
        grad[i - 1] -= g;
        grad_si += d * d / (si * si * si) - 1.0 / si;
    }
    Ok((value, grad, grad_si))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfKind {
    Cauchy,
    Normal,
    StudentT,
}

/// Log-density of a scaled distribution folded onto the positive half-line
/// (twice the symmetric density for x > 0).
pub fn half_distribution_logdensity(
    kind: HalfKind,
    scale: f64,
    df: Option<f64>,
    x: f64,
) -> Result<f64> {
    Ok(half_distribution_logdensity_grad(kind, scale, df, x)?.0)
}

/// Value plus derivative in x.
pub fn half_distribution_logdensity_grad(
    kind: HalfKind,
    scale: f64,
    df: Option<f64>,
    x: f64,
) -> Result<(f64, f64)> {
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::DomainError(
            "half-distribution scale must be strictly positive".into(),
        ));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::DomainError(format!(
            "half-distribution support is x > 0, got {x}"
        )));
    }
    let s2 = scale * scale;
    match kind {
        HalfKind::Cauchy => {
            let value =
                std::f64::consts::LN_2 - (std::f64::consts::PI * scale).ln() - (x * x / s2).ln_1p();
            Ok((value, -2.0 * x / (s2 + x * x)))
        }
        HalfKind::Normal => {
            let value = 0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln() - 0.5 * x * x / s2;
            Ok((value, -x / s2))
        }
        HalfKind::StudentT => {
            let nu = df.ok_or_else(|| {
                Error::DomainError("half-student-t requires degrees of freedom".into())
            })?;
            if nu < 1.0 {
                return Err(Error::DomainError(
                    "half-student-t degrees of freedom must be >= 1".into(),
                ));
            }
            let value = std::f64::consts::LN_2 + ln_gamma((nu + 1.0) / 2.0)
                - ln_gamma(nu / 2.0)
                - 0.5 * (nu * std::f64::consts::PI).ln()
                - scale.ln()
                - 0.5 * (nu + 1.0) * (1.0 + x * x / (nu * s2)).ln();
            Ok((value, -(nu + 1.0) * x / (nu * s2 + x * x)))
        }
    }
}

/// Hyperprior scales shared by the model: one place for every fixed constant.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperpriorConfig {
    pub half_cauchy_scale_global: f64,
    pub half_cauchy_scale_local: f64,
    pub half_normal_scale_innovation: f64,
    pub half_student_t_df: f64,
    pub half_student_t_scale: f64,
    pub omega_half_cauchy_scale: f64,
}

impl Default for HyperpriorConfig {
    fn default() -> Self {
        HyperpriorConfig {
            half_cauchy_scale_global: 1.0,
            half_cauchy_scale_local: 1.0,
            half_normal_scale_innovation: 0.1,
            half_student_t_df: 3.0,
            half_student_t_scale: 0.1,
            omega_half_cauchy_scale: 10.0,
        }
    }
}

impl HyperpriorConfig {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            self.half_cauchy_scale_global,
            self.half_cauchy_scale_local,
            self.half_normal_scale_innovation,
            self.half_student_t_scale,
            self.omega_half_cauchy_scale,
        ];
        if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "hyperprior scales must be strictly positive".into(),
            ));
        }
        if self.half_student_t_df < 1.0 {
            return Err(Error::InvalidConfig(
                "half-student-t df must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    // Independent multivariate-normal oracle used by the dual-path checks.
    fn mvn_logdensity_zero_mean(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let chol = cov.clone().cholesky().expect("oracle covariance not PD");
        let k = x.len() as f64;
        let half_logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
        let z = chol.solve(x);
        -0.5 * k * LN_2PI - half_logdet - 0.5 * x.dot(&z)
    }

    #[test]
    fn horseshoe_assembly_matches_hand_values() {
        let hs = HorseshoeParams {
            global_scale: 2.0,
            local_scales: DVector::from_vec(vec![1.0, 0.5]),
            raw_weights: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
        };
        let w = assemble_horseshoe_weights(&hs).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 1.0, 1.0]));

        let identity = HorseshoeParams {
            global_scale: 1.0,
            local_scales: DVector::from_element(2, 1.0),
            raw_weights: DMatrix::from_row_slice(2, 2, &[0.3, -0.7, 2.0, 0.0]),
        };
        assert_eq!(
            assemble_horseshoe_weights(&identity).unwrap(),
            identity.raw_weights
        );

        let hs3 = HorseshoeParams {
            global_scale: 0.1,
            local_scales: DVector::from_vec(vec![3.0]),
            raw_weights: DMatrix::from_row_slice(1, 2, &[2.0, -4.0]),
        };
        let w3 = assemble_horseshoe_weights(&hs3).unwrap();
        assert_abs_diff_eq!(w3[(0, 0)], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(w3[(0, 1)], -1.2, epsilon = 1e-12);
    }

    #[test]
    fn horseshoe_shape_mismatch_is_rejected() {
        let hs = HorseshoeParams {
            global_scale: 1.0,
            local_scales: DVector::from_vec(vec![1.0, 1.0, 1.0]),
            raw_weights: DMatrix::zeros(2, 2),
        };
        assert!(matches!(
            assemble_horseshoe_weights(&hs),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn grw_covariance_small_cases() {
        let c2 = grw_covariance(2, 1.0, 1.0);
        assert_eq!(c2, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 3.0]));

        // sigma_i = 0 collapses to the rank-one intercept covariance.
        let flat = grw_covariance(3, 2.0, 0.0);
        assert!(flat.iter().all(|&v| v == 4.0));

        // K=3 expansion of sigma0^2 * 11' + sigma_i^2 * JJ' by hand.
        let c3 = grw_covariance(3, 0.5, 2.0);
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[4.25, 4.25, 4.25, 4.25, 8.25, 8.25, 4.25, 8.25, 12.25],
        );
        assert_abs_diff_eq!(c3, expected, epsilon = 1e-12);
    }

    #[test]
    fn grw_logdensity_zero_row_collects_constants_only() {
        let grw = GrwParams {
            intercept_scale: 1.0,
            innovation_scale: 1.0,
        };
        let v = grw_logdensity(&[0.0; 5], &grw).unwrap();
        // First point has variance sigma0^2 + sigma_i^2 = 2, the four
        // increments are standard normal.
        let expected = -5.0 * 0.5 * LN_2PI - 0.5 * (2.0f64).ln();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn grw_logdensity_single_point_is_head_term_only() {
        let grw = GrwParams {
            intercept_scale: 0.7,
            innovation_scale: 0.1,
        };
        let v = grw_logdensity(&[0.3], &grw).unwrap();
        let head = (0.7f64 * 0.7 + 0.1 * 0.1).sqrt();
        assert_abs_diff_eq!(v, normal_logdensity(0.3, head), epsilon = 1e-15);
        // And it matches the K=1 dense covariance exactly.
        let cov = grw_covariance(1, 0.7, 0.1);
        let dense = mvn_logdensity_zero_mean(&DVector::from_vec(vec![0.3]), &cov);
        assert_abs_diff_eq!(v, dense, epsilon = 1e-12);
    }

    #[test]
    fn grw_dual_path_fixed_case() {
        let grw = GrwParams {
            intercept_scale: 1.0,
            innovation_scale: 0.5,
        };
        let row = [1.0, 1.0, 2.0];
        let telescoped = grw_logdensity(&row, &grw).unwrap();
        let cov = grw_covariance(3, 1.0, 0.5);
        let dense = mvn_logdensity_zero_mean(&DVector::from_row_slice(&row), &cov);
        assert_abs_diff_eq!(telescoped, dense, epsilon = 1e-8);
    }

    #[test]
    fn grw_gradient_matches_finite_differences() {
        let grw = GrwParams {
            intercept_scale: 1.3,
            innovation_scale: 0.4,
        };
        let row = [0.2, -0.5, 0.1, 0.9];
        let (_, grad, grad_si) = grw_logdensity_grad(&row, &grw).unwrap();
        let h = 1e-6;
        for i in 0..row.len() {
            let mut plus = row;
            let mut minus = row;
            plus[i] += h;
            minus[i] -= h;
            let fd = (grw_logdensity(&plus, &grw).unwrap()
                - grw_logdensity(&minus, &grw).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(grad[i], fd, epsilon = 1e-6);
        }
        let up = GrwParams {
            innovation_scale: grw.innovation_scale + h,
            ..grw
        };
        let dn = GrwParams {
            innovation_scale: grw.innovation_scale - h,
            ..grw
        };
        let fd =
            (grw_logdensity(&row, &up).unwrap() - grw_logdensity(&row, &dn).unwrap()) / (2.0 * h);
        assert_abs_diff_eq!(grad_si, fd, epsilon = 1e-5);
    }

    #[test]
    fn half_densities_match_analytic_anchors() {
        // Half-normal density at the origin limit: 2 / sqrt(2 pi s^2).
        let origin = half_distribution_logdensity(HalfKind::Normal, 1.0, None, 1e-12).unwrap();
        let expected = (2.0f64).ln() - 0.5 * LN_2PI;
        assert_abs_diff_eq!(origin, expected, epsilon = 1e-9);
        assert_abs_diff_eq!(expected, -0.22579, epsilon = 1e-5);

        let hc = half_distribution_logdensity(HalfKind::Cauchy, 1.0, None, 1.0).unwrap();
        assert_abs_diff_eq!(hc, (1.0 / std::f64::consts::PI).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(hc, -1.14473, epsilon = 1e-5);

        let near = half_distribution_logdensity(HalfKind::StudentT, 0.1, Some(3.0), 0.1).unwrap();
        let far = half_distribution_logdensity(HalfKind::StudentT, 0.1, Some(3.0), 1.0).unwrap();
        assert!(far < near);
    }

    #[test]
    fn half_density_domain_violations_are_rejected() {
        assert!(matches!(
            half_distribution_logdensity(HalfKind::Normal, 1.0, None, 0.0),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            half_distribution_logdensity(HalfKind::Normal, 1.0, None, -2.0),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            half_distribution_logdensity(HalfKind::StudentT, 1.0, None, 1.0),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            half_distribution_logdensity(HalfKind::Cauchy, -1.0, None, 1.0),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn half_density_gradients_match_finite_differences() {
        let cases = [
            (HalfKind::Cauchy, 1.0, None, 0.8),
            (HalfKind::Normal, 0.1, None, 0.05),
            (HalfKind::StudentT, 0.1, Some(3.0), 0.3),
        ];
        let h = 1e-7;
        for (kind, scale, df, x) in cases {
            let (_, g) = half_distribution_logdensity_grad(kind, scale, df, x).unwrap();
            let fd = (half_distribution_logdensity(kind, scale, df, x + h).unwrap()
                - half_distribution_logdensity(kind, scale, df, x - h).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(g, fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn grw_paths_reproduce_analytic_covariance() {
        let k = 4;
        let (s0, si) = (1.0, 0.5);
        let n = 100_000;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let step0 = Normal::new(0.0, s0).unwrap();
        let stepi = Normal::new(0.0, si).unwrap();
        let mut acc = DMatrix::zeros(k, k);
        for _ in 0..n {
            let mut path = Vec::with_capacity(k);
            let mut x = step0.sample(&mut rng) + stepi.sample(&mut rng);
            path.push(x);
            for _ in 1..k {
                x += stepi.sample(&mut rng);
                path.push(x);
            }
            for i in 0..k {
                for j in 0..k {
                    acc[(i, j)] += path[i] * path[j];
                }
            }
        }
        let emp = acc / n as f64;
        let analytic = grw_covariance(k, s0, si);
        for i in 0..k {
            for j in 0..k {
                let se = ((analytic[(i, i)] * analytic[(j, j)] + analytic[(i, j)].powi(2))
                    / n as f64)
                    .sqrt();
                assert!(
                    (emp[(i, j)] - analytic[(i, j)]).abs() < 3.0 * se,
                    "cov[{i},{j}] {} vs {} (se {se})",
                    emp[(i, j)],
                    analytic[(i, j)]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn grw_dual_path_agrees_on_random_rows(
            row in proptest::collection::vec(-3.0f64..3.0, 1..16),
            s0 in 0.3f64..2.0,
            si in 0.2f64..1.5,
        ) {
            let grw = GrwParams { intercept_scale: s0, innovation_scale: si };
            let telescoped = grw_logdensity(&row, &grw).unwrap();
            let cov = grw_covariance(row.len(), s0, si);
            let dense = mvn_logdensity_zero_mean(&DVector::from_row_slice(&row), &cov);
            prop_assert!((telescoped - dense).abs() < 1e-8);
        }

        #[test]
        fn horseshoe_assembly_is_linear_in_raw_weights(
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
            seed in 0u64..1000,
        ) {
            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let mut sample_matrix =
                || DMatrix::from_fn(3, 4, |_, _| normal.sample(&mut rng));
            let b1 = sample_matrix();
            let b2 = sample_matrix();
            let tau = 0.7;
            let lambda = DVector::from_vec(vec![0.5, 1.0, 2.0]);
            let make = |raw: DMatrix<f64>| HorseshoeParams {
                global_scale: tau,
                local_scales: lambda.clone(),
                raw_weights: raw,
            };
            let combined =
                assemble_horseshoe_weights(&make(&b1 * a + &b2 * b)).unwrap();
            let separate = assemble_horseshoe_weights(&make(b1)).unwrap() * a
                + assemble_horseshoe_weights(&make(b2)).unwrap() * b;
            prop_assert!((combined - separate).abs().max() < 1e-10);
        }
    }
}
