//! Classification metrics. Metrics that need both classes return `None` on a
//! one-class input so callers record a missing value instead of a fake zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub brier: Option<f64>,
    pub cross_entropy: Option<f64>,
}

/// Mann-Whitney AUC via midranks; ties count one half. Rank sums stay on
/// half-integers, so the result equals exact pair counting.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j].
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Sensitivity and specificity at a decision threshold; score >= threshold
/// predicts positive.
pub fn confusion_metrics(
    scores: &[f64],
    labels: &[u8],
    threshold: f64,
) -> (Option<f64>, Option<f64>) {
    assert_eq!(scores.len(), labels.len());
    let (mut tp, mut fnc, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let predicted_pos = s >= threshold;
        match (y, predicted_pos) {
            (1, true) => tp += 1,
            (1, false) => fnc += 1,
            (0, false) => tn += 1,
            (0, true) => fp += 1,
            _ => unreachable!("labels are 0/1"),
        }
    }
    let sens = (tp + fnc > 0).then(|| tp as f64 / (tp + fnc) as f64);
    let spec = (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64);
    (sens, spec)
}

pub fn brier(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::InvalidEval("brier needs matching nonempty inputs".into()));
    }
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| (p - y as f64).powi(2))
        .sum::<f64>()
        / probs.len() as f64)
}

pub fn cross_entropy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::InvalidEval(
            "cross entropy needs matching nonempty inputs".into(),
        ));
    }
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / probs.len() as f64)
}

/// All five metrics for one test fold of probability scores.
pub fn metric_set(probs: &[f64], labels: &[u8]) -> Result<MetricSet> {
    let (sens, spec) = confusion_metrics(probs, labels, 0.5);
    Ok(MetricSet {
        auc: auc(probs, labels),
        sensitivity: sens,
        specificity: spec,
        brier: Some(brier(probs, labels)?),
        cross_entropy: Some(cross_entropy(probs, labels)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn separated_scores_give_full_auc() {
        assert_eq!(
            auc(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]),
            Some(1.0)
        );
    }

    #[test]
    fn crossed_pairs_average_to_half() {
        // positives {0.9, 0.2}, negatives {0.4, 0.6}: 2 of 4 pairs won.
        assert_eq!(auc(&[0.9, 0.2, 0.4, 0.6], &[1, 1, 0, 0]), Some(0.5));
    }

    #[test]
    fn all_ties_give_half() {
        assert_eq!(auc(&[0.5; 6], &[1, 0, 1, 0, 1, 0]), Some(0.5));
    }

    #[test]
    fn one_class_auc_is_missing() {
        assert_eq!(auc(&[0.1, 0.9], &[1, 1]), None);
    }

    fn brute_force_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut total = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            if labels[i] != 1 {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if si > sj {
                    total += 1.0;
                } else if si == sj {
                    total += 0.5;
                }
            }
        }
        total / pairs
    }

    proptest! {
        #[test]
        fn auc_equals_pair_counting(
            values in proptest::collection::vec((0u8..=1, 0i32..20), 2..200)
        ) {
            prop_assume!(values.iter().any(|(y, _)| *y == 1));
            prop_assume!(values.iter().any(|(y, _)| *y == 0));
            // Coarse integer scores force plenty of ties.
            let scores: Vec<f64> = values.iter().map(|(_, s)| *s as f64 / 4.0).collect();
            let labels: Vec<u8> = values.iter().map(|(y, _)| *y).collect();
            let fast = auc(&scores, &labels).unwrap();
            let slow = brute_force_auc(&scores, &labels);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn rank_metrics_ignore_monotone_transforms(
            values in proptest::collection::vec((0u8..=1, 0i32..=100), 4..60),
            gamma in 0.2f64..5.0
        ) {
            prop_assume!(values.iter().any(|(y, _)| *y == 1));
            prop_assume!(values.iter().any(|(y, _)| *y == 0));
            // Grid scores keep |2s-1| >= 0.02 away from the fixed point, so
            // the power map stays injective in floating point.
            let scores: Vec<f64> = values.iter().map(|(_, s)| *s as f64 / 100.0).collect();
            let labels: Vec<u8> = values.iter().map(|(y, _)| *y).collect();
            // Strictly increasing [0,1] -> [0,1] map fixing the 0.5 threshold.
            let mapped: Vec<f64> = scores
                .iter()
                .map(|&s| 0.5 + 0.5 * (2.0 * s - 1.0).signum() * (2.0 * s - 1.0).abs().powf(gamma))
                .collect();
            prop_assert_eq!(auc(&scores, &labels), auc(&mapped, &labels));
            prop_assert_eq!(
                confusion_metrics(&scores, &labels, 0.5),
                confusion_metrics(&mapped, &labels, 0.5)
            );
        }
    }

    #[test]
    fn confusion_hand_count() {
        let (sens, spec) = confusion_metrics(&[0.6, 0.4, 0.5, 0.3], &[1, 1, 0, 0], 0.5);
        assert_eq!(sens, Some(0.5));
        assert_eq!(spec, Some(0.5));
    }

    #[test]
    fn all_predicted_positive() {
        let (sens, spec) = confusion_metrics(&[0.9, 0.8, 0.7], &[1, 0, 0], 0.5);
        assert_eq!(sens, Some(1.0));
        assert_eq!(spec, Some(0.0));
    }

    #[test]
    fn uninformative_probabilities_hit_the_reference_values() {
        let probs = [0.5; 8];
        let labels = [1, 0, 1, 0, 1, 0, 1, 0];
        assert_abs_diff_eq!(brier(&probs, &labels).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(
            cross_entropy(&probs, &labels).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn perfect_probabilities_score_zero() {
        let probs = [1.0, 0.0, 1.0];
        let labels = [1, 0, 1];
        assert_abs_diff_eq!(brier(&probs, &labels).unwrap(), 0.0, epsilon = 1e-15);
        assert!(cross_entropy(&probs, &labels).unwrap() < 1e-10);
    }

    #[test]
    fn extreme_wrong_probability_is_clamped_not_infinite() {
        let ce = cross_entropy(&[0.0], &[1]).unwrap();
        assert!(ce.is_finite());
        assert_abs_diff_eq!(ce, -(PROB_CLAMP.ln()) * 1.0, epsilon = 1e-6);
    }
}
