//! Corrected resampled statistics, false-discovery control, and the minimal
//! detectable effect size.
//!
//! Repeated CV fold values are dependent; the variance correction multiplies
//! the naive fold variance by (1/(kr) + n2/n1) before any t statistic or
//! interval is formed.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    pub mean: f64,
    /// Uncorrected fold-level standard deviation.
    pub sd: f64,
    pub zero_variance: bool,
}

fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn correction_factor(k: usize, r: usize, n1: f64, n2: f64) -> f64 {
    1.0 / (k * r) as f64 + n2 / n1
}

fn check_inputs(values: &[f64], n1: f64) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::InvalidEval(
            "corrected statistics need at least two fold values".into(),
        ));
    }
    if !(n1 > 0.0) {
        return Err(Error::InvalidEval("train size must be positive".into()));
    }
    Ok(())
}

pub fn corrected_ttest(
    values: &[f64],
    k: usize,
    r: usize,
    n1: f64,
    n2: f64,
    null_value: f64,
) -> Result<CorrectedTest> {
    check_inputs(values, n1)?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = sample_variance(values);
    let df = n - 1.0;
    if var == 0.0 {
        let (t, p) = if mean == null_value {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean - null_value), 0.0)
        };
        return Ok(CorrectedTest {
            t,
            p,
            df,
            mean,
            sd: 0.0,
            zero_variance: true,
        });
    }
    let corr_var = correction_factor(k, r, n1, n2) * var;
    let t = (mean - null_value) / corr_var.sqrt();
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidEval(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(CorrectedTest {
        t,
        p,
        df,
        mean,
        sd: var.sqrt(),
        zero_variance: false,
    })
}

/// Paired comparison: the test runs on fold-wise differences against zero.
pub fn corrected_paired_ttest(
    a: &[f64],
    b: &[f64],
    k: usize,
    r: usize,
    n1: f64,
    n2: f64,
) -> Result<CorrectedTest> {
    if a.len() != b.len() {
        return Err(Error::InvalidEval(
            "paired test needs fold values of equal length".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    corrected_ttest(&diffs, k, r, n1, n2, 0.0)
}

pub fn corrected_ci(
    values: &[f64],
    k: usize,
    r: usize,
    n1: f64,
    n2: f64,
    level: f64,
) -> Result<(f64, f64)> {
    check_inputs(values, n1)?;
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidEval("confidence level must lie in (0,1)".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let corr_sd = (correction_factor(k, r, n1, n2) * sample_variance(values)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::InvalidEval(format!("t distribution: {e}")))?;
    let tq = dist.inverse_cdf(1.0 - (1.0 - level) / 2.0);
    Ok((mean - tq * corr_sd, mean + tq * corr_sd))
}

/// Benjamini-Hochberg step-up. Returns rejection flags and adjusted p-values
/// (cumulative-minimum form), both in input order.
pub fn bh_fdr(pvalues: &[f64], q: f64) -> Result<(Vec<bool>, Vec<f64>)> {
    if pvalues.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidEval("p-values must lie in [0, 1]".into()));
    }
    let m = pvalues.len();
    if m == 0 {
        return Ok((vec![], vec![]));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].partial_cmp(&pvalues[b]).unwrap());
    let mut cutoff_rank = 0;
    for (rank0, &idx) in order.iter().enumerate() {
        if pvalues[idx] <= q * (rank0 + 1) as f64 / m as f64 {
            cutoff_rank = rank0 + 1;
        }
    }
    let mut reject = vec![false; m];
    for &idx in order.iter().take(cutoff_rank) {
        reject[idx] = true;
    }
    let mut adjusted = vec![0.0; m];
    let mut running_min = 1.0f64;
    for rank0 in (0..m).rev() {
        let idx = order[rank0];
        let candidate = (pvalues[idx] * m as f64 / (rank0 + 1) as f64).min(1.0);
        running_min = running_min.min(candidate);
        adjusted[idx] = running_min;
    }
    Ok((reject, adjusted))
}

/// Smallest detectable shift from `null` given the corrected fold variance,
/// at two-sided `alpha` and the requested power.
pub fn mdes(
    sigma_fold: f64,
    k: usize,
    r: usize,
    n1: f64,
    n2: f64,
    alpha: f64,
    power: f64,
    null: f64,
) -> Result<f64> {
    if !(sigma_fold >= 0.0) {
        return Err(Error::InvalidEval("sigma_fold must be >= 0".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z = normal.inverse_cdf(1.0 - alpha / 2.0) + normal.inverse_cdf(power);
    Ok(null + z * (correction_factor(k, r, n1, n2) * sigma_fold * sigma_fold).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ci_half_width_matches_the_reference_factor() {
        // k=5, r=10, n2/n1 = 0.25: sqrt(0.27) * t_{49, 0.975}.
        let factor = correction_factor(5, 10, 4.0, 1.0);
        assert_abs_diff_eq!(factor, 0.27, epsilon = 1e-12);
        let dist = StudentsT::new(0.0, 1.0, 49.0).unwrap();
        let half_width = factor.sqrt() * dist.inverse_cdf(0.975);
        assert_abs_diff_eq!(half_width, 1.0443, epsilon = 5e-4);
        assert!((half_width - 1.04).abs() < 0.01);
    }

    #[test]
    fn corrected_se_inflation_is_about_three_point_seven() {
        let naive = 1.0 / (5.0 * 10.0);
        let inflation = (correction_factor(5, 10, 4.0, 1.0) / naive).sqrt();
        assert_abs_diff_eq!(inflation, 13.5f64.sqrt(), epsilon = 1e-12);
        assert!((inflation - 3.7).abs() < 0.05);
    }

    #[test]
    fn constant_folds_at_the_null_give_t_zero_p_one() {
        let out = corrected_ttest(&[0.5; 50], 5, 10, 4.0, 1.0, 0.5).unwrap();
        assert_eq!(out.t, 0.0);
        assert_eq!(out.p, 1.0);
        assert!(out.zero_variance);
    }

    #[test]
    fn constant_folds_off_the_null_give_infinite_t() {
        let out = corrected_ttest(&[0.75; 50], 5, 10, 4.0, 1.0, 0.5).unwrap();
        assert!(out.t.is_infinite() && out.t > 0.0);
        assert_eq!(out.p, 0.0);
        assert!(out.zero_variance);
    }

    #[test]
    fn reduces_to_the_classical_one_sample_test() {
        // r = 1, n2 = 0: the correction factor is 1/k, the classical 1/n.
        let values = [0.62, 0.55, 0.71, 0.48, 0.66];
        let out = corrected_ttest(&values, 5, 1, 4.0, 0.0, 0.5).unwrap();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = sample_variance(&values).sqrt();
        let classical = (mean - 0.5) / (sd / n.sqrt());
        assert_abs_diff_eq!(out.t, classical, epsilon = 1e-12);
    }

    #[test]
    fn paired_test_runs_on_differences() {
        let a = [0.7, 0.72, 0.68, 0.74];
        let b = [0.6, 0.66, 0.59, 0.63];
        let paired = corrected_paired_ttest(&a, &b, 2, 2, 3.0, 1.0).unwrap();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let direct = corrected_ttest(&diffs, 2, 2, 3.0, 1.0, 0.0).unwrap();
        assert_eq!(paired, direct);
        assert!(paired.t > 0.0);
    }

    #[test]
    fn step_up_examples() {
        let (reject, adjusted) = bh_fdr(&[0.01, 0.02, 0.03, 0.04], 0.05).unwrap();
        assert_eq!(reject, vec![true; 4]);
        assert_abs_diff_eq!(adjusted[3], 0.04, epsilon = 1e-12);

        let (reject, _) = bh_fdr(&[0.2, 0.9], 0.05).unwrap();
        assert_eq!(reject, vec![false, false]);

        let (reject, adjusted) = bh_fdr(&[0.04], 0.05).unwrap();
        assert_eq!(reject, vec![true]);
        assert_abs_diff_eq!(adjusted[0], 0.04, epsilon = 1e-15);
    }

    #[test]
    fn adjusted_pvalues_are_cumulative_minima() {
        let (_, adjusted) = bh_fdr(&[0.9, 0.01, 0.04, 0.02], 0.05).unwrap();
        // sorted: 0.01, 0.02, 0.04, 0.9 -> m*p/j = 0.04, 0.04, 0.0533, 0.9
        assert_abs_diff_eq!(adjusted[1], 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(adjusted[3], 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(adjusted[2], 0.04 * 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(adjusted[0], 0.9, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rejections_grow_with_q(
            ps in proptest::collection::vec(0.0f64..1.0, 1..40),
            q in 0.01f64..0.2,
            extra in 0.01f64..0.5
        ) {
            let (reject_small, _) = bh_fdr(&ps, q).unwrap();
            let (reject_large, _) = bh_fdr(&ps, q + extra).unwrap();
            for (s, l) in reject_small.iter().zip(&reject_large) {
                prop_assert!(!s || *l);
            }
        }
    }

    #[test]
    fn mdes_reference_value_and_limits() {
        let v = mdes(0.19, 5, 10, 4.0, 1.0, 0.05, 0.8, 0.5).unwrap();
        assert_abs_diff_eq!(v, 0.5 + 0.2766, epsilon = 1e-3);
        let zero = mdes(0.0, 5, 10, 4.0, 1.0, 0.05, 0.8, 0.5).unwrap();
        assert_abs_diff_eq!(zero, 0.5, epsilon = 1e-15);
        let double = mdes(0.38, 5, 10, 4.0, 1.0, 0.05, 0.8, 0.5).unwrap();
        assert_abs_diff_eq!(double - 0.5, 2.0 * (v - 0.5), epsilon = 1e-12);
    }
}
