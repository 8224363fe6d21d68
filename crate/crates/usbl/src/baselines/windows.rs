//! Fixed per-channel averaging windows relative to stimulus onset.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Five windows covering the early response.
pub const SHORT_WINDOWS: [(f64, f64); 5] = [
    (-0.05, 0.05),
    (0.05, 0.2),
    (0.2, 0.3),
    (0.3, 0.4),
    (0.4, 0.5),
];

/// Additional windows extending the span to -200..1000 ms; the long set is
/// the short set with these appended.
pub const LONG_EXTRA_WINDOWS: [(f64, f64); 4] =
    [(-0.2, -0.05), (0.0, 0.05), (0.5, 0.7), (0.7, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    Short,
    Long,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowSet {
    /// `(start_s, end_s)` relative to stimulus onset; half-open `[start, end)`.
    pub windows: Vec<(f64, f64)>,
    pub kind: WindowKind,
}

impl WindowSet {
    pub fn short() -> Self {
        WindowSet {
            windows: SHORT_WINDOWS.to_vec(),
            kind: WindowKind::Short,
        }
    }

    pub fn long() -> Self {
        let mut windows = SHORT_WINDOWS.to_vec();
        windows.extend_from_slice(&LONG_EXTRA_WINDOWS);
        WindowSet {
            windows,
            kind: WindowKind::Long,
        }
    }

    pub fn of(kind: WindowKind) -> Self {
        match kind {
            WindowKind::Short => Self::short(),
            WindowKind::Long => Self::long(),
        }
    }
}

/// Per-channel means inside each window, channel-major: feature
/// `c * n_windows + w` is channel `c` averaged over window `w`. Sample `k`
/// sits at time `(k - stimulus_index) / sample_rate`.
pub fn window_features(
    segment: &DMatrix<f64>,
    set: &WindowSet,
    sample_rate: f64,
    stimulus_index: usize,
) -> Result<Vec<f64>> {
    let (channels, samples) = segment.shape();
    let mut spans = Vec::with_capacity(set.windows.len());
    for &(start_s, end_s) in &set.windows {
        let mut idx = Vec::new();
        for k in 0..samples {
            let t = (k as f64 - stimulus_index as f64) / sample_rate;
            if t >= start_s && t < end_s {
                idx.push(k);
            }
        }
        if idx.is_empty() {
            return Err(Error::WindowOutOfRange { start_s, end_s });
        }
        spans.push(idx);
    }

    let mut features = Vec::with_capacity(channels * set.windows.len());
    for c in 0..channels {
        for idx in &spans {
            let sum: f64 = idx.iter().map(|&k| segment[(c, k)]).sum();
            features.push(sum / idx.len() as f64);
        }
    }
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_set_appends_to_the_short_set() {
        let (short, long) = (WindowSet::short(), WindowSet::long());
        assert_eq!(short.windows.len(), 5);
        assert_eq!(long.windows.len(), 9);
        assert_eq!(&long.windows[..5], &short.windows[..]);
        for &(a, b) in &long.windows {
            assert!(a < b);
        }
    }

    #[test]
    fn constant_segment_yields_constant_features() {
        let seg = DMatrix::from_element(3, 40, 1.0);
        let f = window_features(&seg, &WindowSet::short(), 40.0, 10).unwrap();
        assert_eq!(f.len(), 15);
        assert!(f.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_window_mean_over_three_samples() {
        let seg = DMatrix::from_fn(1, 6, |_, k| k as f64);
        let set = WindowSet {
            windows: vec![(0.2, 0.5)],
            kind: WindowKind::Short,
        };
        // Samples 2, 3, 4 sit at 0.2, 0.3, 0.4 s; sample 5 at 0.5 s is
        // excluded by the half-open end.
        let f = window_features(&seg, &set, 10.0, 0).unwrap();
        assert_eq!(f, vec![3.0]);
    }

    #[test]
    fn short_set_on_a_typical_eeg_segment() {
        let seg = DMatrix::from_element(64, 71, 0.0);
        let f = window_features(&seg, &WindowSet::short(), 50.0, 10).unwrap();
        assert_eq!(f.len(), 320);
    }

    #[test]
    fn feature_order_is_channel_major() {
        let seg = DMatrix::from_fn(2, 10, |c, k| if c == 0 { k as f64 } else { 100.0 });
        let set = WindowSet {
            windows: vec![(0.0, 0.2), (0.2, 0.4)],
            kind: WindowKind::Short,
        };
        let f = window_features(&seg, &set, 10.0, 0).unwrap();
        assert_eq!(f, vec![0.5, 2.5, 100.0, 100.0]);
    }

    #[test]
    fn empty_window_is_out_of_range() {
        // Times run -0.2..0.4 s, so the (0.5, 0.7) window catches nothing.
        let seg = DMatrix::from_element(1, 7, 0.0);
        let err = window_features(&seg, &WindowSet::long(), 10.0, 2).unwrap_err();
        assert!(matches!(err, Error::WindowOutOfRange { .. }));
    }
}
