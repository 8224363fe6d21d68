//! Prediction-time scoring: assembled weights applied to raw sessions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::leadfield::haufe_weights;
use crate::model::config::{ModelContext, PriorKind};
use crate::model::params::{ModalityBlock, ModelParameters};
use crate::model::posterior::sigmoid;
use crate::tensor_io::Session;

/// Weights in data space, one matrix per modality. For the EEG matrix prior
/// this is the sensor-covariance solve of the contrast; every other prior's
/// weights are used directly.
#[derive(Debug, Clone)]
pub struct ScoringModel {
    pub names: Vec<String>,
    pub alphas: Vec<f64>,
    pub weights: Vec<DMatrix<f64>>,
    pub omega: f64,
}

pub fn assemble_scoring_model(
    params: &ModelParameters,
    model: &ModelContext,
    data_cov: Option<&DMatrix<f64>>,
) -> Result<ScoringModel> {
    if params.blocks.len() != model.entries.len() {
        return Err(Error::DomainError(
            "parameter state does not match the modality list".into(),
        ));
    }
    let mut weights = Vec::with_capacity(model.entries.len());
    for (block, entry) in params.blocks.iter().zip(&model.entries) {
        weights.push(match block {
            ModalityBlock::Gaussian { weights } => weights.clone(),
            ModalityBlock::Horseshoe {
                log_global,
                log_local,
                raw,
                ..
            } => {
                let tau = log_global.exp();
                let mut w = raw.clone();
                for c in 0..w.nrows() {
                    let s = tau * log_local[c].exp();
                    for k in 0..w.ncols() {
                        w[(c, k)] *= s;
                    }
                }
                w
            }
            ModalityBlock::Dugh { contrast, .. } => {
                debug_assert_eq!(entry.prior, PriorKind::EegDugh);
                let cov = data_cov.ok_or_else(|| {
                    Error::DomainError(format!(
                        "modality '{}' needs a sensor covariance to assemble weights",
                        entry.name
                    ))
                })?;
                haufe_weights(cov, contrast)?
            }
            ModalityBlock::LowRank {
                left,
                log_global,
                log_local,
                raw_scales,
                right_t,
                ..
            } => {
                let s = ModelParameters::lowrank_scales(*log_global, log_local, raw_scales);
                let mut scaled = left.clone();
                for j in 0..s.len() {
                    for c in 0..scaled.nrows() {
                        scaled[(c, j)] *= s[j];
                    }
                }
                scaled * right_t
            }
        });
    }
    Ok(ScoringModel {
        names: model.entries.iter().map(|e| e.name.clone()).collect(),
        alphas: params.alphas.clone(),
        weights,
        omega: params.omega,
    })
}

impl ScoringModel {
    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    /// `sign(t) * sum_m alpha_m <X^m_t, W^m>`; +1 for incongruent trials, -1
    /// for congruent, no intercept.
    pub fn trial_logit(&self, session: &Session, t: usize) -> Result<f64> {
        if t >= session.trial_count() {
            return Err(Error::DomainError(format!(
                "trial {t} out of range for session {}",
                session.participant_id
            )));
        }
        let mut z = 0.0;
        for (mi, name) in self.names.iter().enumerate() {
            let trials = session.trials(name)?;
            let x = &trials[t];
            let w = &self.weights[mi];
            if x.nrows() != w.nrows() || x.ncols() != w.ncols() {
                return Err(Error::ShapeMismatch {
                    modality: name.clone(),
                    expected: format!("{} x {}", w.nrows(), w.ncols()),
                    found: format!("{} x {}", x.nrows(), x.ncols()),
                });
            }
            z += self.alphas[mi] * x.dot(w);
        }
        Ok(session.conditions[t].sign() * z)
    }

    /// Trial-average evidence without the confidence scale.
    pub fn session_evidence(&self, session: &Session) -> Result<f64> {
        let t = session.trial_count();
        if t == 0 {
            return Err(Error::DomainError(format!(
                "session {} has no trials",
                session.participant_id
            )));
        }
        let mut total = 0.0;
        for i in 0..t {
            total += self.trial_logit(session, i)?;
        }
        Ok(total / t as f64)
    }

    /// `(omega / T) * sum_t z_t`.
    pub fn session_logit(&self, session: &Session) -> Result<f64> {
        Ok(self.omega * self.session_evidence(session)?)
    }

    pub fn predict(&self, session: &Session) -> Result<f64> {
        Ok(sigmoid(self.session_logit(session)?))
    }
}
