//! Per-channel standardization.
//!
//! Scales are fit on the training pool (all trials, all time points of all
//! training sessions) and applied unchanged to held-out sessions.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor_io::dataset::Session;

#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub modality: String,
    /// Per-channel centering offsets (training-pool means).
    pub channel_offsets: DVector<f64>,
    /// Per-channel multipliers, 1 / pooled standard deviation.
    pub channel_scales: DVector<f64>,
}

/// Fits offsets and scales so the training pool has per-channel mean 0 and
/// variance 1 after application.
pub fn fit_standardizer(train: &[Session], modality: &str) -> Result<Standardizer> {
    let mut channels = None;
    let mut count = 0usize;
    let mut sums: DVector<f64> = DVector::zeros(0);
    for session in train {
        for seg in session.trials(modality)? {
            let c = seg.nrows();
            if channels.is_none() {
                channels = Some(c);
                sums = DVector::zeros(c);
            }
            count += seg.ncols();
            for ch in 0..c {
                sums[ch] += seg.row(ch).sum();
            }
        }
    }
    let channels = channels.ok_or_else(|| Error::UnknownModality(modality.into()))?;
    if count == 0 {
        return Err(Error::UnknownModality(modality.into()));
    }
    let means = sums / count as f64;

    let mut sq: DVector<f64> = DVector::zeros(channels);
    for session in train {
        for seg in session.trials(modality)? {
            for ch in 0..channels {
                for k in 0..seg.ncols() {
                    let d = seg[(ch, k)] - means[ch];
                    sq[ch] += d * d;
                }
            }
        }
    }
    let mut scales = DVector::zeros(channels);
    for ch in 0..channels {
        let var = sq[ch] / count as f64;
        if var <= 0.0 || !var.is_finite() {
            return Err(Error::ZeroVariance {
                modality: modality.into(),
                channel: ch,
            });
        }
        scales[ch] = 1.0 / var.sqrt();
    }
    Ok(Standardizer {
        modality: modality.into(),
        channel_offsets: means,
        channel_scales: scales,
    })
}

/// Applies fitted offsets and scales to one session, leaving other
/// modalities untouched.
pub fn apply_standardizer(std: &Standardizer, session: &Session) -> Result<Session> {
    let segs = session.trials(&std.modality)?;
    let scaled: Vec<DMatrix<f64>> = segs
        .iter()
        .map(|seg| {
            DMatrix::from_fn(seg.nrows(), seg.ncols(), |r, c| {
                (seg[(r, c)] - std.channel_offsets[r]) * std.channel_scales[r]
            })
        })
        .collect();
    session.with_modality_data(&std.modality, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::dataset::Condition;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn session_with(id: &str, values: &[f64]) -> Session {
        let seg = DMatrix::from_row_slice(1, values.len(), values);
        let mut trials = BTreeMap::new();
        trials.insert("m".to_string(), vec![seg]);
        Session::new(
            id.into(),
            Some(1),
            vec![Condition::Incongruent; 1],
            trials,
        )
        .unwrap()
    }

    fn pooled_variance(sessions: &[Session], modality: &str) -> f64 {
        let mut vals = Vec::new();
        for s in sessions {
            for seg in s.trials(modality).unwrap() {
                vals.extend(seg.iter().copied());
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn sd_two_gives_scale_half() {
        let train = [session_with("p0", &[2.0, -2.0, 2.0, -2.0])];
        let std = fit_standardizer(&train, "m").unwrap();
        assert_abs_diff_eq!(std.channel_scales[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(std.channel_offsets[0], 0.0, epsilon = 1e-12);
        let test = session_with("p1", &[4.0, 4.0, 4.0, 4.0]);
        let out = apply_standardizer(&std, &test).unwrap();
        assert_abs_diff_eq!(out.trials("m").unwrap()[0][(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_variance_data_keeps_unit_scales() {
        let train = [session_with("p0", &[1.0, -1.0, 1.0, -1.0])];
        let std = fit_standardizer(&train, "m").unwrap();
        assert_abs_diff_eq!(std.channel_scales[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn train_scales_do_not_renormalize_test_sessions() {
        // Train pool has variance 4 -> scale 0.5. A disjoint test session with
        // raw variance 9 must come out at 9 * 0.25, not 1.
        let train = [session_with("p0", &[2.0, -2.0, 2.0, -2.0])];
        let std = fit_standardizer(&train, "m").unwrap();
        let test = [apply_standardizer(&std, &session_with("p1", &[3.0, -3.0, 3.0, -3.0])).unwrap()];
        let expected = 9.0 * std.channel_scales[0].powi(2);
        assert_abs_diff_eq!(pooled_variance(&test, "m"), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 2.25, epsilon = 1e-12);
    }

    #[test]
    fn training_pool_is_unit_variance_after_application() {
        let train = [
            session_with("p0", &[0.3, 1.7, -2.2, 0.9]),
            session_with("p1", &[5.0, -1.0, 0.4, 2.6]),
        ];
        let std = fit_standardizer(&train, "m").unwrap();
        let scaled: Vec<Session> = train
            .iter()
            .map(|s| apply_standardizer(&std, s).unwrap())
            .collect();
        assert_abs_diff_eq!(pooled_variance(&scaled, "m"), 1.0, epsilon = 1e-6);
        // Idempotence: refitting on standardized data gives unit scales.
        let refit = fit_standardizer(&scaled, "m").unwrap();
        assert_abs_diff_eq!(refit.channel_scales[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(refit.channel_offsets[0], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_variance_channel_is_named() {
        let train = [session_with("p0", &[7.0, 7.0, 7.0])];
        match fit_standardizer(&train, "m") {
            Err(Error::ZeroVariance { modality, channel }) => {
                assert_eq!(modality, "m");
                assert_eq!(channel, 0);
            }
            other => panic!("expected ZeroVariance, got {other:?}"),
        }
    }
}
