//! End-to-end model fitting for one training split: standardize, estimate
//! sensor covariances where the prior needs them, optimize the posterior
//! mode, and attach the Laplace curvature.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::adam::{fit_map, OptimizerSchedule};
use crate::infer::init::init_parameters;
use crate::infer::laplace::laplace_diag;
use crate::leadfield::{
    cholesky_with_jitter, estimate_data_covariance, estimate_noise_covariance, matrix_to_rows,
    CovarianceEstimate, LeadField,
};
use crate::model::{
    log_posterior, log_posterior_with_grad, prepare_training_data, DughOperators, FittedModel,
    ModelConfig, ModelContext, ParamLayout, PosteriorContext, PriorKind,
};
use crate::tensor_io::{apply_standardizer, fit_standardizer, ModalityShape, Session, Standardizer};

pub const DEFAULT_NOISE_FACTORS: usize = 5;
pub const DEFAULT_EM_ITERS: usize = 200;
pub const DEFAULT_SHRINKAGE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub schedule: OptimizerSchedule,
    /// Factors in the pre-stimulus noise model.
    pub noise_factors: usize,
    pub em_iters: usize,
    /// Diagonal shrinkage of the post-stimulus covariance.
    pub shrinkage: f64,
    pub laplace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            schedule: OptimizerSchedule::default(),
            noise_factors: DEFAULT_NOISE_FACTORS,
            em_iters: DEFAULT_EM_ITERS,
            shrinkage: DEFAULT_SHRINKAGE,
            laplace: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Fit {
    pub model: FittedModel,
    /// Negative log posterior before each optimizer update.
    pub objective_trace: Vec<f64>,
}

struct SensorStats {
    covariances: CovarianceEstimate,
    noise: DMatrix<f64>,
    data_chol: Cholesky<f64, Dyn>,
}

/// Pools standardized pre- and post-stimulus sample vectors across trials and
/// estimates the two sensor covariances the matrix-normal prior consumes.
fn sensor_statistics(
    sessions: &[Session],
    shape: &ModalityShape,
    options: &FitOptions,
) -> Result<SensorStats> {
    let si = shape.stimulus_index;
    if si == 0 {
        return Err(Error::DomainError(format!(
            "modality '{}' has no pre-stimulus samples to estimate noise from",
            shape.name
        )));
    }
    if si >= shape.samples {
        return Err(Error::DomainError(format!(
            "modality '{}' has no post-stimulus samples (stimulus index {} of {})",
            shape.name, si, shape.samples
        )));
    }
    let c = shape.channels;
    let mut pre = Vec::new();
    let mut post = Vec::new();
    for sess in sessions {
        for trial in sess.trials(&shape.name)? {
            for k in 0..shape.samples {
                let dst = if k < si { &mut pre } else { &mut post };
                for ch in 0..c {
                    dst.push(trial[(ch, k)]);
                }
            }
        }
    }
    let pre = DMatrix::from_row_slice(pre.len() / c, c, &pre);
    let post = DMatrix::from_row_slice(post.len() / c, c, &post);
    let fa = estimate_noise_covariance(&pre, options.noise_factors, options.em_iters)?;
    let data = estimate_data_covariance(&post, options.shrinkage)?;
    let data_chol = cholesky_with_jitter(&data, "sensor covariance")?;
    Ok(SensorStats {
        covariances: CovarianceEstimate {
            noise_cov: matrix_to_rows(&fa.covariance),
            data_cov: matrix_to_rows(&data),
            shrinkage: options.shrinkage,
        },
        noise: fa.covariance,
        data_chol,
    })
}

/// Fits the model on a training split. `leadfield` must already be
/// preprocessed and is required exactly when the configuration contains a
/// matrix-prior EEG modality.
pub fn fit_stage1(
    train: &[Session],
    shapes: &[ModalityShape],
    leadfield: Option<&LeadField>,
    config: &ModelConfig,
    options: &FitOptions,
) -> Result<Stage1Fit> {
    if train.is_empty() {
        return Err(Error::DomainError("training split is empty".into()));
    }
    let ctx = ModelContext::new(config, shapes, leadfield.map(|lf| lf.region_count))?;

    let mut standardizers: Vec<Standardizer> = Vec::with_capacity(ctx.entries.len());
    let mut sessions: Vec<Session> = train.to_vec();
    for e in &ctx.entries {
        let std = fit_standardizer(&sessions, &e.name)?;
        for s in &mut sessions {
            *s = apply_standardizer(&std, s)?;
        }
        standardizers.push(std);
    }

    let dugh_entries: Vec<usize> = ctx
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.prior == PriorKind::EegDugh)
        .map(|(i, _)| i)
        .collect();
    if dugh_entries.len() > 1 {
        return Err(Error::InvalidConfig(
            "at most one matrix-prior EEG modality is supported per model".into(),
        ));
    }

    let mut covariances = None;
    let mut cov_chols: Vec<Option<Cholesky<f64, Dyn>>> =
        (0..ctx.entries.len()).map(|_| None).collect();
    let mut dugh_slots: Vec<Option<DughOperators>> = vec![None; ctx.entries.len()];
    if let Some(&i) = dugh_entries.first() {
        let entry = &ctx.entries[i];
        let lf = leadfield.ok_or_else(|| {
            Error::InvalidConfig(format!(
                "modality '{}' needs a lead field, none was provided",
                entry.name
            ))
        })?;
        if lf.n_channels() != entry.channels {
            return Err(Error::ShapeMismatch {
                modality: entry.name.clone(),
                expected: format!("{} lead-field channels", entry.channels),
                found: format!("{}", lf.n_channels()),
            });
        }
        let shape = shapes
            .iter()
            .find(|s| s.name == entry.name)
            .ok_or_else(|| Error::UnknownModality(entry.name.clone()))?;
        let stats = sensor_statistics(&sessions, shape, options)?;
        dugh_slots[i] = Some(DughOperators::new(lf, stats.noise, entry.samples)?);
        cov_chols[i] = Some(stats.data_chol);
        covariances = Some(stats.covariances);
    }

    let prepared = prepare_training_data(&sessions, &ctx, &cov_chols)?;
    let layout = ParamLayout::for_context(&ctx);
    let pctx = PosteriorContext::new(&ctx, &layout, &prepared, &dugh_slots)?;
    let init = init_parameters(&layout, options.schedule.seed);
    let fit = fit_map(
        |x: &DVector<f64>| {
            let (lp, grad) = log_posterior_with_grad(&pctx, x)?;
            Ok((-lp, -grad))
        },
        &init,
        &options.schedule,
    )?;

    let (curvature, curvature_flagged) = if options.laplace {
        let ld = laplace_diag(|x: &DVector<f64>| log_posterior(&pctx, x).map(|lp| -lp), &fit.params)?;
        (Some(ld.precisions), ld.flagged)
    } else {
        (None, false)
    };

    let params = layout.unpack(&fit.params)?;
    Ok(Stage1Fit {
        model: FittedModel {
            config: config.clone(),
            entries: ctx.entries,
            standardizers,
            covariances,
            params,
            curvature,
            curvature_flagged,
            omega: 1.0,
            omega_samples: None,
        },
        objective_trace: fit.objective_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leadfield::preprocess_leadfield;
    use crate::model::ModalityModelConfig;
    use crate::tensor_io::Condition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::collections::BTreeMap;

    fn shapes_no_eeg() -> Vec<ModalityShape> {
        vec![
            ModalityShape {
                name: "gaze".into(),
                channels: 2,
                samples: 6,
                sample_rate: 60.0,
                stimulus_index: 0,
            },
            ModalityShape {
                name: "rt".into(),
                channels: 1,
                samples: 1,
                sample_rate: 1.0,
                stimulus_index: 0,
            },
        ]
    }

    fn config_no_eeg() -> ModelConfig {
        ModelConfig {
            modalities: vec![
                ModalityModelConfig {
                    name: "gaze".into(),
                    prior: PriorKind::GroupHorseshoeGrw,
                },
                ModalityModelConfig {
                    name: "rt".into(),
                    prior: PriorKind::Gaussian,
                },
            ],
            ..ModelConfig::default()
        }
    }

    fn planted_sessions(n: usize, trials: usize, seed: u64) -> Vec<Session> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|p| {
                let y = (p % 2) as u8;
                let y_signed = 2.0 * y as f64 - 1.0;
                let conditions: Vec<Condition> = (0..trials)
                    .map(|t| {
                        if t % 2 == 0 {
                            Condition::Incongruent
                        } else {
                            Condition::Congruent
                        }
                    })
                    .collect();
                let mut gaze = Vec::with_capacity(trials);
                let mut rt = Vec::with_capacity(trials);
                for cond in &conditions {
                    let sign = cond.sign();
                    gaze.push(DMatrix::from_fn(2, 6, |ch, _| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let mean = if ch == 0 { sign * y_signed * 0.6 } else { 0.0 };
                        mean + 0.4 * noise
                    }));
                    rt.push(DMatrix::from_fn(1, 1, |_, _| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        sign * y_signed * 0.5 + 0.5 * noise
                    }));
                }
                let mut trials_map = BTreeMap::new();
                trials_map.insert("gaze".to_string(), gaze);
                trials_map.insert("rt".to_string(), rt);
                Session::new(format!("p{p:02}"), Some(y), conditions, trials_map).unwrap()
            })
            .collect()
    }

    fn short_options(steps: usize, seed: u64) -> FitOptions {
        FitOptions {
            schedule: OptimizerSchedule {
                steps,
                seed,
                ..OptimizerSchedule::default()
            },
            ..FitOptions::default()
        }
    }

    #[test]
    fn planted_signal_separates_training_labels() {
        let sessions = planted_sessions(6, 8, 4);
        let fit = fit_stage1(
            &sessions,
            &shapes_no_eeg(),
            None,
            &config_no_eeg(),
            &short_options(400, 0),
        )
        .unwrap();
        let first = fit.objective_trace[0];
        let last = *fit.objective_trace.last().unwrap();
        assert!(last < first, "objective did not decrease: {first} -> {last}");

        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for s in &sessions {
            let z = fit.model.session_evidence(s).unwrap();
            if s.y().unwrap() > 0.5 {
                pos.push(z);
            } else {
                neg.push(z);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&pos) > mean(&neg) + 0.05,
            "pos {pos:?} neg {neg:?}"
        );
        assert_eq!(fit.model.omega, 1.0);
        assert_eq!(fit.model.standardizers.len(), 2);
        assert!(fit.model.covariances.is_none());
        assert!(!fit.model.curvature.as_ref().unwrap().is_empty());
    }

    #[test]
    fn refits_are_bitwise_identical() {
        let sessions = planted_sessions(4, 6, 9);
        let run = || {
            let fit = fit_stage1(
                &sessions,
                &shapes_no_eeg(),
                None,
                &config_no_eeg(),
                &short_options(120, 3),
            )
            .unwrap();
            let ctx = fit.model.context().unwrap();
            let layout = ParamLayout::for_context(&ctx);
            layout
                .pack(&fit.model.params)
                .unwrap()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    fn small_leadfield() -> LeadField {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let gains = DMatrix::from_fn(4, 9, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let positions = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
        );
        let lf = LeadField::new(gains, positions, vec![0, 0, 1]).unwrap();
        preprocess_leadfield(&lf, 1.0).unwrap()
    }

    fn eeg_sessions(n: usize, trials: usize, seed: u64) -> Vec<Session> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|p| {
                let y = (p % 2) as u8;
                let y_signed = 2.0 * y as f64 - 1.0;
                let conditions: Vec<Condition> = (0..trials)
                    .map(|t| {
                        if t % 2 == 0 {
                            Condition::Incongruent
                        } else {
                            Condition::Congruent
                        }
                    })
                    .collect();
                let eeg: Vec<DMatrix<f64>> = conditions
                    .iter()
                    .map(|cond| {
                        let sign = cond.sign();
                        DMatrix::from_fn(4, 5, |ch, k| {
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            // Post-stimulus deflection on channels 0 and 1.
                            let mean = if k >= 2 && ch < 2 {
                                sign * y_signed * 0.5
                            } else {
                                0.0
                            };
                            mean + 0.6 * noise
                        })
                    })
                    .collect();
                let mut trials_map = BTreeMap::new();
                trials_map.insert("eeg".to_string(), eeg);
                Session::new(format!("p{p:02}"), Some(y), conditions, trials_map).unwrap()
            })
            .collect()
    }

    fn eeg_shape() -> Vec<ModalityShape> {
        vec![ModalityShape {
            name: "eeg".into(),
            channels: 4,
            samples: 5,
            sample_rate: 100.0,
            stimulus_index: 2,
        }]
    }

    #[test]
    fn matrix_prior_fit_produces_a_complete_artifact() {
        let sessions = eeg_sessions(6, 10, 15);
        let lf = small_leadfield();
        let config = ModelConfig {
            modalities: vec![ModalityModelConfig {
                name: "eeg".into(),
                prior: PriorKind::EegDugh,
            }],
            ..ModelConfig::default()
        };
        let options = FitOptions {
            noise_factors: 2,
            em_iters: 60,
            ..short_options(150, 1)
        };
        let fit = fit_stage1(&sessions, &eeg_shape(), Some(&lf), &config, &options).unwrap();
        let cov = fit.model.covariances.as_ref().unwrap();
        assert_eq!(cov.noise_cov.len(), 4);
        assert_eq!(cov.data_cov.len(), 4);
        assert_eq!(cov.shrinkage, DEFAULT_SHRINKAGE);
        assert!(fit.objective_trace.iter().all(|v| v.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        crate::model::save_fitted_model(&fit.model, &path).unwrap();
        let back = crate::model::load_fitted_model(&path).unwrap();
        let p = back.predict_session(&sessions[0]).unwrap();
        assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn matrix_prior_without_leadfield_is_rejected() {
        let sessions = eeg_sessions(4, 6, 2);
        let config = ModelConfig {
            modalities: vec![ModalityModelConfig {
                name: "eeg".into(),
                prior: PriorKind::EegDugh,
            }],
            ..ModelConfig::default()
        };
        let err = fit_stage1(
            &sessions,
            &eeg_shape(),
            None,
            &config,
            &short_options(10, 0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err:?}");
    }

    #[test]
    fn stimulus_at_the_first_sample_cannot_supply_noise_estimates() {
        let sessions = eeg_sessions(4, 6, 2);
        let mut shapes = eeg_shape();
        shapes[0].stimulus_index = 0;
        let lf = small_leadfield();
        let config = ModelConfig {
            modalities: vec![ModalityModelConfig {
                name: "eeg".into(),
                prior: PriorKind::EegDugh,
            }],
            ..ModelConfig::default()
        };
        let err = fit_stage1(&sessions, &shapes, Some(&lf), &config, &short_options(10, 0))
            .unwrap_err();
        assert!(matches!(err, Error::DomainError(_)), "{err:?}");
    }
}
