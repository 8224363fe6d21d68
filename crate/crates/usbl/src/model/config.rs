//! Model configuration: which prior each modality gets and the fixed
//! hyperprior scales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::HyperpriorConfig;
use crate::tensor_io::ModalityShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    /// Matrix-normal contrast with a lead-field source covariance; weights
    /// come out of the sensor-covariance solve.
    EegDugh,
    /// Factored weights with sparse singular scales and smooth right factors.
    EegLowRank,
    /// Per-channel sparsity with a random-walk prior along the sample axis.
    GroupHorseshoeGrw,
    /// Per-channel sparsity with independent unit-normal raw weights.
    GroupHorseshoe,
    /// Plain unit-normal weights.
    Gaussian,
}

impl PriorKind {
    pub fn is_eeg(self) -> bool {
        matches!(self, PriorKind::EegDugh | PriorKind::EegLowRank)
    }

    pub fn needs_leadfield(self) -> bool {
        matches!(self, PriorKind::EegDugh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityModelConfig {
    pub name: String,
    pub prior: PriorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub modalities: Vec<ModalityModelConfig>,
    pub hyperpriors: HyperpriorConfig,
    /// Half-normal scale of the random-walk innovation spread (0.1, or 0.01
    /// for the tighter variant).
    pub innovation_scale_prior: f64,
    /// When false, modalities with EEG priors are dropped from the model.
    pub include_eeg: bool,
    pub lowrank_max_rank: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let hyperpriors = HyperpriorConfig::default();
        ModelConfig {
            modalities: Vec::new(),
            innovation_scale_prior: hyperpriors.half_normal_scale_innovation,
            hyperpriors,
            include_eeg: true,
            lowrank_max_rank: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyperpriors.validate()?;
        if self.modalities.is_empty() {
            return Err(Error::InvalidConfig("model has no modalities".into()));
        }
        if !(self.innovation_scale_prior > 0.0) {
            return Err(Error::InvalidConfig(
                "innovation_scale_prior must be strictly positive".into(),
            ));
        }
        if self.lowrank_max_rank == 0 {
            return Err(Error::InvalidConfig("lowrank_max_rank must be >= 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.modalities {
            if !seen.insert(m.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "modality '{}' configured twice",
                    m.name
                )));
            }
        }
        Ok(())
    }
}

/// One modality as the posterior sees it: shape plus prior bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityEntry {
    pub name: String,
    pub prior: PriorKind,
    pub channels: usize,
    pub samples: usize,
    /// Region count of the lead field (EEG matrix-normal prior only).
    pub regions: Option<usize>,
    /// Factorization rank (low-rank prior only).
    pub rank: Option<usize>,
}

/// Resolved model structure: the effective modality list in configuration
/// order, after the EEG include flag and shape validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContext {
    pub entries: Vec<ModalityEntry>,
    pub hyper: HyperpriorConfig,
    pub innovation_scale_prior: f64,
}

impl ModelContext {
    pub fn new(
        config: &ModelConfig,
        shapes: &[ModalityShape],
        region_count: Option<usize>,
    ) -> Result<Self> {
        config.validate()?;
        let mut entries = Vec::new();
        for m in &config.modalities {
            if m.prior.is_eeg() && !config.include_eeg {
                continue;
            }
            let shape = shapes
                .iter()
                .find(|s| s.name == m.name)
                .ok_or_else(|| Error::UnknownModality(m.name.clone()))?;
            let (regions, rank) = match m.prior {
                PriorKind::EegDugh => {
                    let r = region_count.ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "modality '{}' needs a lead field for its prior",
                            m.name
                        ))
                    })?;
                    (Some(r), None)
                }
                PriorKind::EegLowRank => (
                    None,
                    Some(config.lowrank_max_rank.min(shape.channels).min(shape.samples)),
                ),
                _ => (None, None),
            };
            entries.push(ModalityEntry {
                name: m.name.clone(),
                prior: m.prior,
                channels: shape.channels,
                samples: shape.samples,
                regions,
                rank,
            });
        }
        if entries.is_empty() {
            return Err(Error::InvalidConfig(
                "no modalities left after applying the EEG include flag".into(),
            ));
        }
        Ok(ModelContext {
            entries,
            hyper: config.hyperpriors,
            innovation_scale_prior: config.innovation_scale_prior,
        })
    }

    pub fn from_entries(
        entries: Vec<ModalityEntry>,
        hyper: HyperpriorConfig,
        innovation_scale_prior: f64,
    ) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig("model has no modalities".into()));
        }
        Ok(ModelContext {
            entries,
            hyper,
            innovation_scale_prior,
        })
    }

    pub fn has_dugh(&self) -> bool {
        self.entries.iter().any(|e| e.prior == PriorKind::EegDugh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes() -> Vec<ModalityShape> {
        vec![
            ModalityShape {
                name: "eeg".into(),
                channels: 8,
                samples: 12,
                sample_rate: 100.0,
                stimulus_index: 2,
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

    fn config() -> ModelConfig {
        ModelConfig {
            modalities: vec![
                ModalityModelConfig {
                    name: "eeg".into(),
                    prior: PriorKind::EegDugh,
                },
                ModalityModelConfig {
                    name: "rt".into(),
                    prior: PriorKind::GroupHorseshoe,
                },
            ],
            ..ModelConfig::default()
        }
    }

    #[test]
    fn eeg_flag_filters_entries() {
        let ctx = ModelContext::new(&config(), &shapes(), Some(3)).unwrap();
        assert_eq!(ctx.entries.len(), 2);
        assert_eq!(ctx.entries[0].regions, Some(3));

        let mut cfg = config();
        cfg.include_eeg = false;
        let ctx = ModelContext::new(&cfg, &shapes(), None).unwrap();
        assert_eq!(ctx.entries.len(), 1);
        assert_eq!(ctx.entries[0].name, "rt");
    }

    #[test]
    fn dugh_without_leadfield_is_rejected() {
        assert!(ModelContext::new(&config(), &shapes(), None).is_err());
    }

    #[test]
    fn lowrank_rank_is_clamped_by_shape() {
        let mut cfg = config();
        cfg.modalities[0].prior = PriorKind::EegLowRank;
        let ctx = ModelContext::new(&cfg, &shapes(), None).unwrap();
        assert_eq!(ctx.entries[0].rank, Some(8));
        cfg.lowrank_max_rank = 64;
        let ctx = ModelContext::new(&cfg, &shapes(), None).unwrap();
        assert_eq!(ctx.entries[0].rank, Some(8.min(12).min(8)));
    }

    #[test]
    fn empty_and_duplicate_configs_are_rejected() {
        let empty = ModelConfig::default();
        assert!(empty.validate().is_err());
        let mut dup = config();
        dup.modalities.push(ModalityModelConfig {
            name: "rt".into(),
            prior: PriorKind::Gaussian,
        });
        assert!(dup.validate().is_err());
    }

    #[test]
    fn unknown_modality_name_is_rejected() {
        let mut cfg = config();
        cfg.modalities[1].name = "emg".into();
        assert!(matches!(
            ModelContext::new(&cfg, &shapes(), Some(3)),
            Err(Error::UnknownModality(_))
        ));
    }
}
