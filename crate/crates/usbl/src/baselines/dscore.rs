//! Classical reaction-time D-score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::Condition;

/// Clamp bounds applied when RT preprocessing is requested.
pub const RT_CLAMP_MS: (f64, f64) = (300.0, 10_000.0);

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DScoreResult {
    pub mean_incongruent: f64,
    pub mean_congruent: f64,
    /// Sample standard deviation of latency across all trials, both
    /// conditions pooled.
    pub pooled_sd: f64,
    pub d: f64,
}

/// Mean incongruent minus mean congruent latency, divided by the standard
/// deviation over all trials. `clamp_rts` snaps latencies into
/// [`RT_CLAMP_MS`] first.
pub fn dscore(trials: &[(f64, Condition)], clamp_rts: bool) -> Result<DScoreResult> {
    let mut incongruent = Vec::new();
    let mut congruent = Vec::new();
    for &(rt, cond) in trials {
        let rt = if clamp_rts {
            rt.clamp(RT_CLAMP_MS.0, RT_CLAMP_MS.1)
        } else {
            rt
        };
        match cond {
            Condition::Incongruent => incongruent.push(rt),
            Condition::Congruent => congruent.push(rt),
        }
    }
    if incongruent.is_empty() || congruent.is_empty() {
        return Err(Error::OneConditionOnly);
    }
    let n = incongruent.len() + congruent.len();
    debug_assert!(n >= 2);

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_incongruent = mean(&incongruent);
    let mean_congruent = mean(&congruent);

    let grand = incongruent
        .iter()
        .chain(&congruent)
        .sum::<f64>()
        / n as f64;
    let ss: f64 = incongruent
        .iter()
        .chain(&congruent)
        .map(|rt| (rt - grand).powi(2))
        .sum();
    let pooled_sd = (ss / (n - 1) as f64).sqrt();
    if pooled_sd <= 0.0 {
        return Err(Error::DegenerateRt);
    }

    Ok(DScoreResult {
        mean_incongruent,
        mean_congruent,
        pooled_sd,
        d: (mean_incongruent - mean_congruent) / pooled_sd,
    })
}

pub fn dscore_classify(d: f64, threshold: f64) -> u8 {
    u8::from(d > threshold)
}
