//! Session-level decoding built from per-trial linear models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::recode::recode_labels;
use crate::baselines::ridge::{
    fit_ridge_lr, predict_ridge_lr, RidgeLRModel, RIDGE_GRID, RIDGE_NESTED_FOLDS,
};
use crate::baselines::slda::{fit_slda, predict_slda, SLDAModel};
use crate::baselines::windows::{window_features, WindowSet};
use crate::error::{Error, Result};
use crate::infer::init::derive_seed;
use crate::tensor_io::{Condition, ModalityShape, Session};

/// Bound on per-trial logits entering the session average.
pub const LOGIT_CLAMP: f64 = 15.0;

const RIDGE_SEED_STREAM: u64 = 0xB15E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Train on congruency-flipped labels, invert predictions per trial.
    Recoded,
    /// Train on the participant label replicated over trials.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Slda,
    RidgeLr,
}

enum TrialModel {
    Slda(SLDAModel),
    Ridge(RidgeLRModel),
}

impl TrialModel {
    fn score(&self, x: &DVector<f64>) -> f64 {
        match self {
            TrialModel::Slda(m) => predict_slda(m, x),
            TrialModel::Ridge(m) => predict_ridge_lr(m, x),
        }
    }
}

/// Per-trial logit of the class-1 probability, after any recoding flip,
/// clamped and averaged into a session logit.
fn pool_trial_logits(logits: &[f64]) -> f64 {
    let sum: f64 = logits
        .iter()
        .map(|s| s.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
        .sum();
    sum / logits.len() as f64
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The trial-model score predicts the recoded (congruency) class, so the
/// participant-label logit flips sign on incongruent-design trials.
fn label_logit(score: f64, condition: Condition, mode: DecodeMode) -> f64 {
    match mode {
        DecodeMode::Direct => score,
        DecodeMode::Recoded => match condition {
            Condition::Congruent => score,
            Condition::Incongruent => -score,
        },
    }
}

fn trial_rows(
    sessions: &[Session],
    shape: &ModalityShape,
    windows: &WindowSet,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for session in sessions {
        for trial in session.trials(&shape.name)? {
            rows.push(window_features(
                trial,
                windows,
                shape.sample_rate,
                shape.stimulus_index,
            )?);
        }
    }
    Ok(rows)
}

/// Trains a per-trial model on the training split and returns one class-1
/// probability per test session, trial logits averaged.
pub fn run_baseline(
    train: &[Session],
    test: &[Session],
    shape: &ModalityShape,
    windows: &WindowSet,
    method: BaselineMethod,
    mode: DecodeMode,
    seed: u64,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::DomainError("training split is empty".into()));
    }
    let rows = trial_rows(train, shape, windows)?;
    let n_features = rows[0].len();

    let mut labels = Vec::with_capacity(rows.len());
    for session in train {
        match mode {
            DecodeMode::Recoded => labels.extend(recode_labels(session)?),
            DecodeMode::Direct => {
                let y = session.label.ok_or(Error::LabelMissing {
                    participant: session.participant_id.clone(),
                })?;
                labels.extend(std::iter::repeat_n(y, session.trial_count()));
            }
        }
    }

    // Train-split z-scoring; constant features pass through unscaled.
    let n = rows.len() as f64;
    let mut offsets = vec![0.0; n_features];
    let mut scales = vec![1.0; n_features];
    for j in 0..n_features {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        offsets[j] = mean;
        if var.sqrt() > 1e-12 {
            scales[j] = var.sqrt();
        }
    }
    let standardize = |row: &[f64]| -> DVector<f64> {
        DVector::from_iterator(
            row.len(),
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - offsets[j]) / scales[j]),
        )
    };

    let x = DMatrix::from_fn(rows.len(), n_features, |i, j| {
        (rows[i][j] - offsets[j]) / scales[j]
    });
    let model = match method {
        BaselineMethod::Slda => TrialModel::Slda(fit_slda(&x, &labels)?),
        BaselineMethod::RidgeLr => TrialModel::Ridge(fit_ridge_lr(
            &x,
            &labels,
            &RIDGE_GRID,
            RIDGE_NESTED_FOLDS,
            derive_seed(seed, RIDGE_SEED_STREAM, 0),
        )?),
    };

    let mut probs = Vec::with_capacity(test.len());
    for session in test {
        let mut logits = Vec::with_capacity(session.trial_count());
        for (t, trial) in session.trials(&shape.name)?.iter().enumerate() {
            let feats = window_features(trial, windows, shape.sample_rate, shape.stimulus_index)?;
            let score = model.score(&standardize(&feats));
            logits.push(label_logit(score, session.conditions[t], mode));
        }
        probs.push(logistic(pool_trial_logits(&logits)));
    }
    Ok(probs)
}
