//! Confidence calibration: nested cross-validation collects held-out session
//! evidences, a scalar-scale posterior is sampled from them, and the final
//! model carries the posterior median as its confidence scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::folds::{make_folds, CVConfig};
use crate::infer::init::derive_seed;
use crate::infer::omega::{posterior_median, sample_omega, MCMCConfig};
use crate::infer::pipeline::{fit_stage1, FitOptions};
use crate::leadfield::LeadField;
use crate::model::{FittedModel, ModelConfig};
use crate::tensor_io::{ModalityShape, Session};

/// Seed streams for the nested fits, the final fit, and the sampler. The
/// nested fold index is mixed in per fold.
const NESTED_FIT_STREAM: u64 = 0xCA11;
const FINAL_FIT_STREAM: u64 = 0xCA1F;
const SCALE_STREAM: u64 = 0xCA15;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateOptions {
    pub fit: FitOptions,
    pub nested_folds: usize,
    pub mcmc: MCMCConfig,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        CalibrateOptions {
            fit: FitOptions::default(),
            nested_folds: 5,
            mcmc: MCMCConfig::default(),
        }
    }
}

/// One held-out evidence/label pair from the nested loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub participant: String,
    /// Nested fold whose test split held this participant out.
    pub fold: usize,
    pub z: f64,
    pub y: f64,
}

#[derive(Debug)]
pub struct CalibratedModel {
    /// Final fit on the full training set; its `omega` is the posterior
    /// median and `omega_samples` holds the draws.
    pub model: FittedModel,
    /// Per-fold fits from the nested loop, in fold order.
    pub nested: Vec<FittedModel>,
    pub pairs: Vec<CalibrationPair>,
    pub omega_point: f64,
    pub omega_samples: Vec<f64>,
    /// The sampler saw all-zero evidence and reproduced the prior.
    pub degenerate: bool,
}

/// Fits the confidence scale on nested held-out evidence, then refits the
/// model on the full training set with the scale attached.
///
/// Every `(z, y)` pair comes from a nested fit that never saw that
/// participant. The prediction rule afterwards is
/// `logistic(omega_point * z)`.
pub fn calibrate(
    train: &[Session],
    shapes: &[ModalityShape],
    leadfield: Option<&LeadField>,
    config: &ModelConfig,
    options: &CalibrateOptions,
    seed: u64,
) -> Result<CalibratedModel> {
    let labels = labeled_participants(train)?;
    let fold_cfg = CVConfig {
        k: options.nested_folds,
        r: 1,
        seed,
        stratified: true,
        allow_unstratified: false,
    };
    let assignment = make_folds(&labels, &fold_cfg)?;

    let by_id: std::collections::BTreeMap<&str, &Session> = train
        .iter()
        .map(|s| (s.participant_id.as_str(), s))
        .collect();

    let fold_outputs: Vec<(FittedModel, Vec<CalibrationPair>)> = assignment
        .splits
        .par_iter()
        .map(|split| {
            ensure_both_classes(&split.train, &by_id, split.fold)?;
            let nested_train: Vec<Session> =
                split.train.iter().map(|id| by_id[id.as_str()].clone()).collect();
            let mut fit_opts = options.fit.clone();
            fit_opts.schedule.seed = derive_seed(seed, NESTED_FIT_STREAM, split.fold as u64);
            let fit = fit_stage1(&nested_train, shapes, leadfield, config, &fit_opts)?;
            let mut pairs = Vec::with_capacity(split.test.len());
            for id in &split.test {
                let session = by_id[id.as_str()];
                let z = fit.model.session_evidence(session)?;
                pairs.push(CalibrationPair {
                    participant: id.clone(),
                    fold: split.fold,
                    z,
                    y: session.y().expect("labels checked above"),
                });
            }
            Ok((fit.model, pairs))
        })
        .collect::<Result<_>>()?;

    let mut nested = Vec::with_capacity(fold_outputs.len());
    let mut pairs = Vec::with_capacity(labels.len());
    for (model, fold_pairs) in fold_outputs {
        nested.push(model);
        pairs.extend(fold_pairs);
    }

    let zy: Vec<(f64, f64)> = pairs.iter().map(|p| (p.z, p.y)).collect();
    let mut mcmc = options.mcmc.clone();
    mcmc.seed = derive_seed(seed, SCALE_STREAM, 0);
    let posterior = sample_omega(&zy, config.hyperpriors.omega_half_cauchy_scale, &mcmc)?;
    let omega_point = posterior_median(&posterior.samples);

    let mut final_opts = options.fit.clone();
    final_opts.schedule.seed = derive_seed(seed, FINAL_FIT_STREAM, 0);
    let mut model = fit_stage1(train, shapes, leadfield, config, &final_opts)?.model;
    model.omega = omega_point;
    model.omega_samples = Some(posterior.samples.clone());

    Ok(CalibratedModel {
        model,
        nested,
        pairs,
        omega_point,
        omega_samples: posterior.samples,
        degenerate: posterior.degenerate,
    })
}

fn labeled_participants(train: &[Session]) -> Result<Vec<(String, u8)>> {
    let mut labels = Vec::with_capacity(train.len());
    let mut has = [false, false];
    for s in train {
        let y = s.label.ok_or_else(|| {
            Error::DomainError(format!("session {} has no label", s.participant_id))
        })?;
        has[y as usize] = true;
        labels.push((s.participant_id.clone(), y));
    }
    if train.len() < 5 || !has[0] || !has[1] {
        return Err(Error::StratificationFailure(
            "calibration needs at least 5 labeled participants with both classes".into(),
        ));
    }
    Ok(labels)
}

fn ensure_both_classes(
    ids: &[String],
    by_id: &std::collections::BTreeMap<&str, &Session>,
    fold: usize,
) -> Result<()> {
    let mut has = [false, false];
    for id in ids {
        if let Some(y) = by_id[id.as_str()].label {
            has[y as usize] = true;
        }
    }
    if has[0] && has[1] {
        Ok(())
    } else {
        Err(Error::StratificationFailure(format!(
            "nested fold {fold} trains on a single class"
        )))
    }
}
