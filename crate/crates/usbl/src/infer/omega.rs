//! Posterior sampling for the session-evidence scale.
//!
//! The scale is sampled on the log axis with an adaptive random-walk
//! Metropolis chain; a trapezoid integrator over the same log axis serves as
//! the reference for validating chain summaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::softplus;
use crate::priors::{half_distribution_logdensity, HalfKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MCMCConfig {
    pub warmup: usize,
    pub samples: usize,
    pub target_acceptance: f64,
    pub seed: u64,
}

impl Default for MCMCConfig {
    fn default() -> Self {
        MCMCConfig {
            warmup: 500,
            samples: 1000,
            target_acceptance: 0.44,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OmegaPosterior {
    pub samples: Vec<f64>,
    /// All session evidences were exactly zero, so the draws reproduce the
    /// prior.
    pub degenerate: bool,
    pub acceptance: f64,
}

/// Log posterior density of `u = ln(scale)` given `(evidence, label)` pairs,
/// including the log-scale Jacobian.
pub fn omega_log_target(u: f64, pairs: &[(f64, f64)], prior_scale: f64) -> f64 {
    let omega = u.exp();
    if !omega.is_finite() || omega <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let prior = match half_distribution_logdensity(HalfKind::Cauchy, prior_scale, None, omega) {
        Ok(v) => v,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut lt = u + prior;
    for &(z, y) in pairs {
        let a = omega * z;
        lt += if y > 0.5 { -softplus(-a) } else { -softplus(a) };
    }
    lt
}

const ADAPT_BATCH: usize = 50;
const ADAPT_FACTOR: f64 = 1.1;

/// Random-walk Metropolis on the log scale. The proposal width adapts toward
/// `target_acceptance` in warmup batches and is frozen afterwards.
pub fn sample_omega(
    pairs: &[(f64, f64)],
    prior_scale: f64,
    cfg: &MCMCConfig,
) -> Result<OmegaPosterior> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(
            "scale sampling needs at least one (evidence, label) pair".into(),
        ));
    }
    if cfg.samples == 0 {
        return Err(Error::InvalidConfig("samples must be >= 1".into()));
    }
    if !(0.0 < cfg.target_acceptance && cfg.target_acceptance < 1.0) {
        return Err(Error::InvalidConfig(
            "target_acceptance must lie in (0, 1)".into(),
        ));
    }
    if !(prior_scale > 0.0) {
        return Err(Error::InvalidConfig("prior scale must be > 0".into()));
    }
    let degenerate = pairs.iter().all(|&(z, _)| z == 0.0);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut u = 0.0f64;
    let mut lt = omega_log_target(u, pairs, prior_scale);
    let mut width = 1.0f64;

    let step = |u: &mut f64, lt: &mut f64, width: f64, rng: &mut ChaCha20Rng| -> bool {
        let noise: f64 = StandardNormal.sample(rng);
        let proposal = *u + width * noise;
        let lt_prop = omega_log_target(proposal, pairs, prior_scale);
        let log_unif: f64 = rng.random::<f64>().ln();
        if log_unif < lt_prop - *lt {
            *u = proposal;
            *lt = lt_prop;
            true
        } else {
            false
        }
    };

    let mut batch_accepts = 0usize;
    for i in 0..cfg.warmup {
        if step(&mut u, &mut lt, width, &mut rng) {
            batch_accepts += 1;
        }
        if (i + 1) % ADAPT_BATCH == 0 {
            let rate = batch_accepts as f64 / ADAPT_BATCH as f64;
            if rate > cfg.target_acceptance {
                width *= ADAPT_FACTOR;
            } else {
                width /= ADAPT_FACTOR;
            }
            batch_accepts = 0;
        }
    }

    let mut samples = Vec::with_capacity(cfg.samples);
    let mut accepts = 0usize;
    for _ in 0..cfg.samples {
        if step(&mut u, &mut lt, width, &mut rng) {
            accepts += 1;
        }
        samples.push(u.exp());
    }
    Ok(OmegaPosterior {
        samples,
        degenerate,
        acceptance: accepts as f64 / cfg.samples as f64,
    })
}

pub fn posterior_median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Trapezoid-rule posterior mean and median of the scale over a log-axis
/// grid. Reference integrator for validating `sample_omega`.
pub fn omega_quadrature_summary(
    pairs: &[(f64, f64)],
    prior_scale: f64,
    lo_u: f64,
    hi_u: f64,
    points: usize,
) -> (f64, f64) {
    assert!(points >= 3 && hi_u > lo_u);
    let du = (hi_u - lo_u) / (points - 1) as f64;
    let us: Vec<f64> = (0..points).map(|i| lo_u + i as f64 * du).collect();
    let lts: Vec<f64> = us
        .iter()
        .map(|&u| omega_log_target(u, pairs, prior_scale))
        .collect();
    let max_lt = lts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = lts
        .iter()
        .enumerate()
        .map(|(i, &lt)| {
            let trap = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
            trap * (lt - max_lt).exp() * du
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mean = us
        .iter()
        .zip(&weights)
        .map(|(&u, &w)| u.exp() * w)
        .sum::<f64>()
        / total;

    let mut cum = 0.0;
    let mut median_u = us[points - 1];
    for i in 0..points {
        let next = cum + weights[i];
        if next >= 0.5 * total {
            let need = 0.5 * total - cum;
            let frac = if weights[i] > 0.0 { need / weights[i] } else { 0.0 };
            median_u = us[i] - du + frac * du;
            break;
        }
        cum = next;
    }
    (mean, median_u.exp())
}
