//! Forward simulation of labeled multi-modal cohorts.
//!
//! Each trial's mean response is `sign(condition) * ybar * effect *
//! rel_effect * multiplier * pattern`; a per-session shared draw induces
//! inter-trial correlation and i.i.d. (optionally AR(1)) noise sits on top.
//! Reaction-time channels map the same latent signal to milliseconds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::init::derive_seed;
use crate::leadfield::{preprocess_leadfield, write_leadfield, LeadField, DEFAULT_KERNEL_MULTIPLIER};
use crate::synth::field::generate_leadfield;
use crate::tensor_io::{write_dataset, Condition, Dataset, ModalityShape, Session};

pub const RT_BASE_MS: f64 = 600.0;
pub const RT_SCALE_MS: f64 = 100.0;

const LABEL_STREAM: u64 = 0x5EED;
const PATTERN_STREAM: u64 = 0x9A77;
const SESSION_STREAM: u64 = 0x5E55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModalitySource {
    /// Scalp projection of sparse source activity through a generated lead
    /// field, so the true contrast stays in the field's column space.
    Eeg { n_vertices: usize, n_regions: usize },
    /// Sparse activation directly on channels.
    Scalar,
    /// Single latency value per trial, in milliseconds.
    ReactionTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthModality {
    pub name: String,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    #[serde(default)]
    pub stimulus_index: usize,
    pub source: ModalitySource,
    /// Modality-relative contrast scale on top of the global effect size.
    #[serde(default = "one")]
    pub rel_effect: f64,
}

fn one() -> f64 {
    1.0
}

impl SynthModality {
    pub fn shape(&self) -> ModalityShape {
        ModalityShape {
            name: self.name.clone(),
            channels: self.channels,
            samples: self.samples,
            sample_rate: self.sample_rate,
            stimulus_index: self.stimulus_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub name: String,
    pub n_participants: usize,
    /// Fraction of participants labeled 1.
    pub class_balance: f64,
    /// Number of condition blocks; even, conditions alternate across blocks.
    pub blocks: usize,
    pub trials_per_block: usize,
    pub modalities: Vec<SynthModality>,
    /// Scale of the true contrast, in trial-noise SD units.
    pub effect_size: f64,
    /// SD of the per-participant effect multiplier around 1.
    pub participant_variability: f64,
    pub trial_noise_sd: f64,
    /// Fraction of trial-feature variance owed to the shared session draw.
    pub within_session_correlation: f64,
    /// Optional AR(1) coefficient for the trial-noise sequence.
    pub ar1: Option<f64>,
    /// Active sources (EEG) or channels (scalar) per modality, capped at the
    /// modality's capacity.
    pub sparsity: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Desk-scale cohort: 24 participants, 120 trials, one lead-field EEG
    /// modality plus a gaze-like channel pair and reaction times.
    fn default() -> Self {
        SynthConfig {
            name: "synthetic-cohort".into(),
            n_participants: 24,
            class_balance: 0.5,
            blocks: 12,
            trials_per_block: 10,
            modalities: vec![
                SynthModality {
                    name: "eeg".into(),
                    channels: 8,
                    samples: 20,
                    sample_rate: 20.0,
                    stimulus_index: 4,
                    source: ModalitySource::Eeg {
                        n_vertices: 60,
                        n_regions: 6,
                    },
                    rel_effect: 1.0,
                },
                SynthModality {
                    name: "gaze".into(),
                    channels: 2,
                    samples: 20,
                    sample_rate: 20.0,
                    stimulus_index: 4,
                    source: ModalitySource::Scalar,
                    rel_effect: 1.0,
                },
                SynthModality {
                    name: "rt".into(),
                    channels: 1,
                    samples: 1,
                    sample_rate: 1.0,
                    stimulus_index: 0,
                    source: ModalitySource::ReactionTime,
                    rel_effect: 1.0,
                },
            ],
            effect_size: 1.0,
            participant_variability: 0.3,
            trial_noise_sd: 1.0,
            within_session_correlation: 0.2,
            ar1: None,
            sparsity: 3,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_participants == 0 {
            return Err(Error::InvalidConfig("n_participants must be >= 1".into()));
        }
        if self.blocks == 0 || self.blocks % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "blocks must be even and >= 2 for alternating conditions, got {}",
                self.blocks
            )));
        }
        if self.trials_per_block == 0 {
            return Err(Error::InvalidConfig("trials_per_block must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.class_balance) {
            return Err(Error::InvalidConfig(format!(
                "class_balance must lie in [0, 1], got {}",
                self.class_balance
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::InvalidConfig("no modalities configured".into()));
        }
        if !(self.effect_size >= 0.0)
            || !(self.participant_variability >= 0.0)
            || !(self.trial_noise_sd >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "effect_size, participant_variability and trial_noise_sd must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.within_session_correlation) {
            return Err(Error::InvalidConfig(format!(
                "within_session_correlation must lie in [0, 1), got {}",
                self.within_session_correlation
            )));
        }
        if let Some(phi) = self.ar1 {
            if !(-1.0..1.0).contains(&phi) {
                return Err(Error::InvalidConfig(format!(
                    "ar1 coefficient must lie in (-1, 1), got {phi}"
                )));
            }
        }
        if self.sparsity == 0 {
            return Err(Error::InvalidConfig("sparsity must be >= 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut eeg_count = 0usize;
        for m in &self.modalities {
            if !seen.insert(m.name.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "modality '{}' configured twice",
                    m.name
                )));
            }
            if m.channels == 0 || m.samples == 0 || !(m.sample_rate > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "modality '{}' needs positive channels, samples and sample rate",
                    m.name
                )));
            }
            if m.samples > 1 && m.stimulus_index + 2 > m.samples {
                return Err(Error::InvalidConfig(format!(
                    "modality '{}' needs at least two post-stimulus samples",
                    m.name
                )));
            }
            if !m.rel_effect.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "modality '{}' rel_effect must be finite",
                    m.name
                )));
            }
            match m.source {
                ModalitySource::Eeg {
                    n_vertices,
                    n_regions,
                } => {
                    eeg_count += 1;
                    if n_regions == 0 || n_vertices < n_regions {
                        return Err(Error::InvalidConfig(format!(
                            "modality '{}' needs n_vertices >= n_regions >= 1",
                            m.name
                        )));
                    }
                }
                ModalitySource::Scalar => {}
                ModalitySource::ReactionTime => {
                    if m.channels != 1 || m.samples != 1 {
                        return Err(Error::InvalidConfig(format!(
                            "reaction-time modality '{}' must be 1 channel x 1 sample",
                            m.name
                        )));
                    }
                }
            }
        }
        if eeg_count > 1 {
            return Err(Error::InvalidConfig(
                "at most one lead-field modality per cohort".into(),
            ));
        }
        Ok(())
    }

    pub fn trials_per_session(&self) -> usize {
        self.blocks * self.trials_per_block
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub labels: Vec<(String, u8)>,
    pub multipliers: Vec<f64>,
    pub effect_size: f64,
    /// Unit-Frobenius true contrast per modality (channels x samples).
    pub patterns: BTreeMap<String, DMatrix<f64>>,
    /// Active vertices (EEG) or channels (scalar / reaction time).
    pub active: BTreeMap<String, Vec<usize>>,
    /// Raw generated lead field of the EEG modality, if any.
    pub leadfield: Option<LeadField>,
}

/// Mid-peaked half-sine over the post-stimulus samples, zero before.
fn temporal_profile(samples: usize, stimulus_index: usize) -> DVector<f64> {
    if samples == 1 {
        return DVector::from_element(1, 1.0);
    }
    let post = samples - stimulus_index;
    DVector::from_fn(samples, |k, _| {
        if k < stimulus_index {
            0.0
        } else {
            let j = (k - stimulus_index + 1) as f64;
            (std::f64::consts::PI * j / (post as f64 + 1.0)).sin()
        }
    })
}

fn sample_unit_vector(rng: &mut ChaCha20Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-6 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn choose_distinct(rng: &mut ChaCha20Rng, pool: usize, count: usize) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..pool).collect();
    indices.shuffle(rng);
    indices.truncate(count);
    indices.sort_unstable();
    indices
}

struct ModalityPlan {
    shape: ModalityShape,
    pattern: DMatrix<f64>,
    active: Vec<usize>,
    rel_effect: f64,
    reaction_time: bool,
    leadfield: Option<LeadField>,
}

fn plan_modality(m: &SynthModality, sparsity: usize, seed: u64) -> Result<ModalityPlan> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let profile = temporal_profile(m.samples, m.stimulus_index);
    let (spatial, active, leadfield, reaction_time) = match m.source {
        ModalitySource::Eeg {
            n_vertices,
            n_regions,
        } => {
            let raw = generate_leadfield(m.channels, n_vertices, n_regions, rng.random())?;
            let smooth = preprocess_leadfield(&raw, DEFAULT_KERNEL_MULTIPLIER)?;
            let active = choose_distinct(&mut rng, n_vertices, sparsity.min(n_vertices));
            let mut a = DVector::zeros(m.channels);
            for &s in &active {
                let orient = sample_unit_vector(&mut rng);
                let block = smooth.vertex_block(s);
                for d in 0..3 {
                    a.axpy(orient[d], &block.column(d), 1.0);
                }
            }
            (a, active, Some(raw), false)
        }
        ModalitySource::Scalar => {
            let active = choose_distinct(&mut rng, m.channels, sparsity.min(m.channels));
            let mut a = DVector::zeros(m.channels);
            for &c in &active {
                a[c] = 1.0;
            }
            (a, active, None, false)
        }
        ModalitySource::ReactionTime => (DVector::from_element(1, 1.0), vec![0], None, true),
    };
    let mut pattern = &spatial * profile.transpose();
    let norm = pattern.norm();
    if !(norm > 0.0) {
        return Err(Error::DomainError(format!(
            "modality '{}' produced a zero contrast pattern",
            m.name
        )));
    }
    pattern /= norm;
    Ok(ModalityPlan {
        shape: m.shape(),
        pattern,
        active,
        rel_effect: m.rel_effect,
        reaction_time,
        leadfield,
    })
}

fn condition_for(block: usize, participant: usize) -> Condition {
    if (block + participant) % 2 == 0 {
        Condition::Congruent
    } else {
        Condition::Incongruent
    }
}

pub fn generate_cohort(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let n = cfg.n_participants;
    let trials = cfg.trials_per_session();

    let mut label_rng =
        ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, LABEL_STREAM, 0));
    let n_pos = ((n as f64) * cfg.class_balance).round().min(n as f64) as usize;
    let mut labels: Vec<u8> = (0..n).map(|i| u8::from(i < n_pos)).collect();
    labels.shuffle(&mut label_rng);
    let multipliers: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut label_rng);
            1.0 + cfg.participant_variability * e
        })
        .collect();

    let mut plans = Vec::with_capacity(cfg.modalities.len());
    for (mi, m) in cfg.modalities.iter().enumerate() {
        plans.push(plan_modality(
            m,
            cfg.sparsity,
            derive_seed(cfg.seed, PATTERN_STREAM, mi as u64),
        )?);
    }

    let rho = cfg.within_session_correlation;
    let shared_sd = (rho / (1.0 - rho)).sqrt() * cfg.trial_noise_sd;

    let width = if n > 100 { 4 } else { 3 };
    let mut sessions = Vec::with_capacity(n);
    for p in 0..n {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SESSION_STREAM, p as u64));
        let ybar = 2.0 * f64::from(labels[p]) - 1.0;
        let gain = ybar * cfg.effect_size * multipliers[p];

        let conditions: Vec<Condition> = (0..trials)
            .map(|t| condition_for(t / cfg.trials_per_block, p))
            .collect();

        let mut data = BTreeMap::new();
        for plan in &plans {
            let (c, k) = (plan.shape.channels, plan.shape.samples);
            let shared = DMatrix::from_fn(c, k, |_, _| {
                let e: f64 = StandardNormal.sample(&mut rng);
                shared_sd * e
            });
            let mut noise_state = DMatrix::zeros(c, k);
            let mut segs = Vec::with_capacity(trials);
            for cond in &conditions {
                let draw = DMatrix::from_fn(c, k, |_, _| StandardNormal.sample(&mut rng));
                match cfg.ar1 {
                    Some(phi) => {
                        let innov_sd = cfg.trial_noise_sd * (1.0 - phi * phi).sqrt();
                        if segs.is_empty() {
                            noise_state = cfg.trial_noise_sd * &draw;
                        } else {
                            noise_state = phi * &noise_state + innov_sd * &draw;
                        }
                    }
                    None => noise_state = cfg.trial_noise_sd * &draw,
                }
                let level = cond.sign() * gain * plan.rel_effect;
                let mut seg = level * &plan.pattern + &shared + &noise_state;
                if plan.reaction_time {
                    seg = seg.map(|u| RT_BASE_MS + RT_SCALE_MS * u);
                }
                segs.push(seg);
            }
            data.insert(plan.shape.name.clone(), segs);
        }
        sessions.push(Session::new(
            format!("p{p:0width$}"),
            Some(labels[p]),
            conditions,
            data,
        )?);
    }

    let dataset = Dataset {
        name: cfg.name.clone(),
        modalities: plans.iter().map(|p| p.shape.clone()).collect(),
        leadfield_path: None,
        sessions,
    };
    let mut patterns = BTreeMap::new();
    let mut active = BTreeMap::new();
    let mut leadfield = None;
    for plan in plans {
        patterns.insert(plan.shape.name.clone(), plan.pattern);
        active.insert(plan.shape.name.clone(), plan.active);
        if plan.leadfield.is_some() {
            leadfield = plan.leadfield;
        }
    }
    let truth = GroundTruth {
        labels: dataset
            .sessions
            .iter()
            .map(|s| (s.participant_id.clone(), s.label.unwrap()))
            .collect(),
        multipliers,
        effect_size: cfg.effect_size,
        patterns,
        active,
        leadfield,
    };
    Ok((dataset, truth))
}

// ---- on-disk artifacts ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternDoc {
    rows: usize,
    cols: usize,
    /// Row-major values.
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthDoc {
    labels: Vec<(String, u8)>,
    multipliers: Vec<f64>,
    effect_size: f64,
    patterns: BTreeMap<String, PatternDoc>,
    active: BTreeMap<String, Vec<usize>>,
}

pub fn save_ground_truth<P: AsRef<Path>>(truth: &GroundTruth, path: P) -> Result<()> {
    let doc = GroundTruthDoc {
        labels: truth.labels.clone(),
        multipliers: truth.multipliers.clone(),
        effect_size: truth.effect_size,
        patterns: truth
            .patterns
            .iter()
            .map(|(name, p)| {
                (
                    name.clone(),
                    PatternDoc {
                        rows: p.nrows(),
                        cols: p.ncols(),
                        values: p.transpose().iter().copied().collect(),
                    },
                )
            })
            .collect(),
        active: truth.active.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    Ok(())
}

/// Reads back a saved ground truth; the lead field travels in its own file
/// and is not restored here.
pub fn load_ground_truth<P: AsRef<Path>>(path: P) -> Result<GroundTruth> {
    let doc: GroundTruthDoc = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    let mut patterns = BTreeMap::new();
    for (name, p) in doc.patterns {
        if p.values.len() != p.rows * p.cols {
            return Err(Error::InvalidConfig(format!(
                "pattern '{name}' declares {} x {} but holds {} values",
                p.rows,
                p.cols,
                p.values.len()
            )));
        }
        patterns.insert(name, DMatrix::from_row_slice(p.rows, p.cols, &p.values));
    }
    Ok(GroundTruth {
        labels: doc.labels,
        multipliers: doc.multipliers,
        effect_size: doc.effect_size,
        patterns,
        active: doc.active,
        leadfield: None,
    })
}

pub const LEADFIELD_FILE: &str = "leadfield.usbl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

/// Generates a cohort and writes the dataset directory: manifest, tensor
/// files, lead field (when present) and the ground-truth document. Returns
/// the manifest path.
pub fn write_cohort<P: AsRef<Path>>(cfg: &SynthConfig, dir: P) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let (dataset, truth) = generate_cohort(cfg)?;
    std::fs::create_dir_all(dir)?;
    let leadfield_file = match &truth.leadfield {
        Some(lf) => {
            write_leadfield(lf, dir.join(LEADFIELD_FILE))?;
            Some(LEADFIELD_FILE)
        }
        None => None,
    };
    let manifest = write_dataset(&dataset, dir, leadfield_file)?;
    save_ground_truth(&truth, dir.join(GROUND_TRUTH_FILE))?;
    Ok(manifest)
}
