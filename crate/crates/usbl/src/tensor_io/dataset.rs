//! Dataset model and manifest loading.
//!
//! A dataset directory holds one `manifest.json` plus one tensor file per
//! (session, modality), shaped trials x channels x samples. Conditions live in
//! the manifest only, as a per-session sequence of `"C"` / `"I"` tags shared
//! by every modality of that session.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::format;

/// Congruency tag of one trial, anchored to the block design: `Congruent`
/// marks the pairing that agrees with the positive (label 1) association.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Congruent,
    Incongruent,
}

impl Condition {
    /// Sign entering the trial logit: +1 incongruent, -1 congruent.
    pub fn sign(self) -> f64 {
        match self {
            Condition::Incongruent => 1.0,
            Condition::Congruent => -1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Condition::Congruent => "C",
            Condition::Incongruent => "I",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "C" => Ok(Condition::Congruent),
            "I" => Ok(Condition::Incongruent),
            other => Err(Error::UnknownConditionTag { tag: other.into() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityShape {
    pub name: String,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    /// Sample index of stimulus onset within the segment.
    pub stimulus_index: usize,
}

impl ModalityShape {
    /// Time in seconds of sample `k` relative to stimulus onset.
    pub fn time_of_sample(&self, k: usize) -> f64 {
        (k as f64 - self.stimulus_index as f64) / self.sample_rate
    }
}

/// Borrowed view of one trial: its data matrix plus the session-level
/// condition tag for that trial index.
#[derive(Debug, Clone, Copy)]
pub struct TrialSegment<'a> {
    pub data: &'a DMatrix<f64>,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub participant_id: String,
    /// 0/1; `None` for unlabeled prediction inputs.
    pub label: Option<u8>,
    pub conditions: Vec<Condition>,
    trials: BTreeMap<String, Vec<DMatrix<f64>>>,
}

impl Session {
    /// Builds a session, enforcing one trial count across modalities and a
    /// matching condition sequence length.
    pub fn new(
        participant_id: String,
        label: Option<u8>,
        conditions: Vec<Condition>,
        trials: BTreeMap<String, Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let t = conditions.len();
        for (modality, segs) in &trials {
            if segs.len() != t {
                return Err(Error::TrialCountMismatch {
                    participant: participant_id,
                    modality: modality.clone(),
                    expected: t,
                    found: segs.len(),
                });
            }
        }
        Ok(Session {
            participant_id,
            label,
            conditions,
            trials,
        })
    }

    pub fn trial_count(&self) -> usize {
        self.conditions.len()
    }

    pub fn modality_names(&self) -> impl Iterator<Item = &str> {
        self.trials.keys().map(String::as_str)
    }

    pub fn has_modality(&self, modality: &str) -> bool {
        self.trials.contains_key(modality)
    }

    pub fn trials(&self, modality: &str) -> Result<&[DMatrix<f64>]> {
        self.trials
            .get(modality)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownModality(modality.into()))
    }

    pub fn segments(&self, modality: &str) -> Result<impl Iterator<Item = TrialSegment<'_>>> {
        let trials = self.trials(modality)?;
        Ok(trials
            .iter()
            .zip(self.conditions.iter())
            .map(|(data, &condition)| TrialSegment { data, condition }))
    }

    /// Replaces the data of one modality, keeping ids and conditions.
    pub fn with_modality_data(&self, modality: &str, data: Vec<DMatrix<f64>>) -> Result<Session> {
        if !self.trials.contains_key(modality) {
            return Err(Error::UnknownModality(modality.into()));
        }
        let mut trials = self.trials.clone();
        trials.insert(modality.into(), data);
        Session::new(
            self.participant_id.clone(),
            self.label,
            self.conditions.clone(),
            trials,
        )
    }

    pub fn y(&self) -> Option<f64> {
        self.label.map(f64::from)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub modalities: Vec<ModalityShape>,
    /// Absolute path of the lead-field file, when the manifest references one.
    pub leadfield_path: Option<PathBuf>,
    pub sessions: Vec<Session>,
}

impl Dataset {
    pub fn modality(&self, name: &str) -> Result<&ModalityShape> {
        self.modalities
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::UnknownModality(name.into()))
    }

    /// Errors if any session lacks a label.
    pub fn require_labels(&self) -> Result<()> {
        for s in &self.sessions {
            if s.label.is_none() {
                return Err(Error::LabelMissing {
                    participant: s.participant_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// New dataset keeping only the sessions at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            modalities: self.modalities.clone(),
            leadfield_path: self.leadfield_path.clone(),
            sessions: indices.iter().map(|&i| self.sessions[i].clone()).collect(),
        }
    }
}

// ---- manifest documents ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    name: String,
    modalities: Vec<ModalityDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leadfield: Option<String>,
    sessions: Vec<SessionDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModalityDoc {
    name: String,
    channels: u64,
    samples: u64,
    sample_rate: f64,
    #[serde(default)]
    stimulus_index: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionDoc {
    participant_id: String,
    label: Option<i64>,
    conditions: Vec<String>,
    tensors: BTreeMap<String, String>,
}

/// Loads a dataset from its manifest, validating every tensor against the
/// declared modality shape and the session's condition sequence.
pub fn load_dataset<P: AsRef<Path>>(manifest_path: P) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let text = std::fs::read_to_string(manifest_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: manifest_path.into(),
        },
        _ => Error::Io(e),
    })?;
    let doc: ManifestDoc =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut modalities = Vec::with_capacity(doc.modalities.len());
    for m in &doc.modalities {
        if m.channels == 0 || m.samples == 0 {
            return Err(Error::Manifest(format!(
                "modality {} must have channels >= 1 and samples >= 1",
                m.name
            )));
        }
        if !(m.sample_rate.is_finite() && m.sample_rate > 0.0) {
            return Err(Error::Manifest(format!(
                "modality {} has invalid sample_rate",
                m.name
            )));
        }
        modalities.push(ModalityShape {
            name: m.name.clone(),
            channels: m.channels as usize,
            samples: m.samples as usize,
            sample_rate: m.sample_rate,
            stimulus_index: m.stimulus_index as usize,
        });
    }

    let mut sessions = Vec::with_capacity(doc.sessions.len());
    for s in &doc.sessions {
        let label = match s.label {
            None => None,
            Some(v @ (0 | 1)) => Some(v as u8),
            Some(v) => {
                return Err(Error::InvalidLabel {
                    participant: s.participant_id.clone(),
                    value: v,
                })
            }
        };
        let conditions: Vec<Condition> = s
            .conditions
            .iter()
            .map(|t| Condition::from_tag(t))
            .collect::<Result<_>>()?;
        let t = conditions.len();

        let mut trials = BTreeMap::new();
        for (modality, rel_path) in &s.tensors {
            let shape = modalities
                .iter()
                .find(|m| &m.name == modality)
                .ok_or_else(|| Error::UnknownModality(modality.clone()))?;
            let path = base.join(rel_path);
            let (dims, values) = format::read_tensor(&path)?;
            if dims.len() != 3
                || dims[1] != shape.channels as u64
                || dims[2] != shape.samples as u64
            {
                return Err(Error::ShapeMismatch {
                    modality: modality.clone(),
                    expected: format!("T x {} x {}", shape.channels, shape.samples),
                    found: format!("{dims:?}"),
                });
            }
            let n_trials = dims[0] as usize;
            if n_trials != t {
                return Err(Error::ConditionLengthMismatch {
                    participant: s.participant_id.clone(),
                    expected: n_trials,
                    found: t,
                });
            }
            let per_trial = shape.channels * shape.samples;
            let segs: Vec<DMatrix<f64>> = (0..n_trials)
                .map(|i| {
                    let chunk = &values[i * per_trial..(i + 1) * per_trial];
                    // Payload is row-major (channel-major); DMatrix stores
                    // column-major, hence from_row_slice.
                    DMatrix::from_row_slice(
                        shape.channels,
                        shape.samples,
                        &chunk.iter().map(|&v| v as f64).collect::<Vec<f64>>(),
                    )
                })
                .collect();
            trials.insert(modality.clone(), segs);
        }
        sessions.push(Session::new(
            s.participant_id.clone(),
            label,
            conditions,
            trials,
        )?);
    }

    Ok(Dataset {
        name: doc.name,
        modalities,
        leadfield_path: doc.leadfield.map(|p| base.join(p)),
        sessions,
    })
}

/// Writes `dataset` into `dir` as a manifest plus one tensor file per
/// (session, modality). `leadfield_file` is recorded verbatim when given; the
/// file itself is written by the caller.
pub fn write_dataset<P: AsRef<Path>>(
    dataset: &Dataset,
    dir: P,
    leadfield_file: Option<&str>,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut session_docs = Vec::with_capacity(dataset.sessions.len());
    for session in &dataset.sessions {
        let mut tensors = BTreeMap::new();
        for modality in session.modality_names().map(String::from).collect::<Vec<_>>() {
            let shape = dataset.modality(&modality)?;
            let segs = session.trials(&modality)?;
            let mut values = Vec::with_capacity(segs.len() * shape.channels * shape.samples);
            for seg in segs {
                if seg.nrows() != shape.channels || seg.ncols() != shape.samples {
                    return Err(Error::ShapeMismatch {
                        modality: modality.clone(),
                        expected: format!("{} x {}", shape.channels, shape.samples),
                        found: format!("{} x {}", seg.nrows(), seg.ncols()),
                    });
                }
                for r in 0..seg.nrows() {
                    for c in 0..seg.ncols() {
                        values.push(seg[(r, c)] as f32);
                    }
                }
            }
            let file = format!("{}_{}.usbl", session.participant_id, modality);
            format::write_tensor(
                dir.join(&file),
                &[
                    segs.len() as u64,
                    shape.channels as u64,
                    shape.samples as u64,
                ],
                &values,
            )?;
            tensors.insert(modality.clone(), file);
        }
        session_docs.push(SessionDoc {
            participant_id: session.participant_id.clone(),
            label: session.label.map(i64::from),
            conditions: session.conditions.iter().map(|c| c.tag().into()).collect(),
            tensors,
        });
    }
    let doc = ManifestDoc {
        name: dataset.name.clone(),
        modalities: dataset
            .modalities
            .iter()
            .map(|m| ModalityDoc {
                name: m.name.clone(),
                channels: m.channels as u64,
                samples: m.samples as u64,
                sample_rate: m.sample_rate,
                stimulus_index: m.stimulus_index as u64,
            })
            .collect(),
        leadfield: leadfield_file.map(String::from),
        sessions: session_docs,
    };
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&doc)?)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_session_tensor(dir: &Path, file: &str, trials: usize, c: usize, k: usize) {
        let values: Vec<f32> = (0..trials * c * k).map(|i| i as f32 * 0.5).collect();
        format::write_tensor(
            dir.join(file),
            &[trials as u64, c as u64, k as u64],
            &values,
        )
        .unwrap();
    }

    fn manifest_json(conditions_a: &[&str]) -> String {
        serde_json::json!({
            "name": "toy",
            "modalities": [
                {"name": "gaze", "channels": 2, "samples": 3, "sample_rate": 10.0, "stimulus_index": 1}
            ],
            "sessions": [
                {"participant_id": "p0", "label": 1, "conditions": conditions_a,
                 "tensors": {"gaze": "p0_gaze.usbl"}},
                {"participant_id": "p1", "label": 0, "conditions": ["C", "I"],
                 "tensors": {"gaze": "p1_gaze.usbl"}}
            ]
        })
        .to_string()
    }

    #[test]
    fn loads_two_sessions() {
        let dir = tempfile::tempdir().unwrap();
        write_session_tensor(dir.path(), "p0_gaze.usbl", 2, 2, 3);
        write_session_tensor(dir.path(), "p1_gaze.usbl", 2, 2, 3);
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, manifest_json(&["C", "I"])).unwrap();
        let ds = load_dataset(&mpath).unwrap();
        assert_eq!(ds.sessions.len(), 2);
        assert_eq!(ds.sessions[0].trial_count(), 2);
        assert_eq!(ds.sessions[0].label, Some(1));
        assert_eq!(
            ds.sessions[0].conditions,
            vec![Condition::Congruent, Condition::Incongruent]
        );
        // Row-major payload: first trial, channel 0 = [0.0, 0.5, 1.0].
        let seg = &ds.sessions[0].trials("gaze").unwrap()[0];
        assert_eq!(seg[(0, 1)], 0.5);
        assert_eq!(seg[(1, 0)], 1.5);
        ds.require_labels().unwrap();
    }

    #[test]
    fn condition_sequence_shorter_than_trials_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_session_tensor(dir.path(), "p0_gaze.usbl", 2, 2, 3);
        write_session_tensor(dir.path(), "p1_gaze.usbl", 2, 2, 3);
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, manifest_json(&["C"])).unwrap();
        match load_dataset(&mpath) {
            Err(Error::ConditionLengthMismatch {
                expected, found, ..
            }) => {
                assert_eq!((expected, found), (2, 1));
            }
            other => panic!("expected ConditionLengthMismatch, got {other:?}"),
        }
    }

    #[test]
    fn full_scale_eeg_shape_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        write_session_tensor(dir.path(), "p0_eeg.usbl", 1, 64, 71);
        let mpath = dir.path().join("manifest.json");
        let doc = serde_json::json!({
            "name": "eeg-shape",
            "modalities": [
                {"name": "eeg", "channels": 64, "samples": 71, "sample_rate": 128.0, "stimulus_index": 13}
            ],
            "sessions": [
                {"participant_id": "p0", "label": 0, "conditions": ["I"],
                 "tensors": {"eeg": "p0_eeg.usbl"}}
            ]
        });
        std::fs::write(&mpath, doc.to_string()).unwrap();
        let ds = load_dataset(&mpath).unwrap();
        let shape = ds.modality("eeg").unwrap();
        assert_eq!((shape.channels, shape.samples), (64, 71));
    }

    #[test]
    fn missing_tensor_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_session_tensor(dir.path(), "p0_gaze.usbl", 2, 2, 3);
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, manifest_json(&["C", "I"])).unwrap();
        assert!(matches!(
            load_dataset(&mpath),
            Err(Error::MissingFile { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_session_tensor(dir.path(), "p0_gaze.usbl", 2, 4, 3);
        write_session_tensor(dir.path(), "p1_gaze.usbl", 2, 2, 3);
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, manifest_json(&["C", "I"])).unwrap();
        assert!(matches!(
            load_dataset(&mpath),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn loading_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_session_tensor(dir.path(), "p0_gaze.usbl", 2, 2, 3);
        write_session_tensor(dir.path(), "p1_gaze.usbl", 2, 2, 3);
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, manifest_json(&["C", "I"])).unwrap();
        assert_eq!(load_dataset(&mpath).unwrap(), load_dataset(&mpath).unwrap());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_session_tensor(dir.path(), "p0_gaze.usbl", 2, 2, 3);
        write_session_tensor(dir.path(), "p1_gaze.usbl", 2, 2, 3);
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, manifest_json(&["C", "I"])).unwrap();
        let ds = load_dataset(&mpath).unwrap();

        let out = dir.path().join("copy");
        let copy_manifest = write_dataset(&ds, &out, None).unwrap();
        let copy = load_dataset(&copy_manifest).unwrap();
        assert_eq!(ds.sessions, copy.sessions);
        assert_eq!(ds.modalities, copy.modalities);
    }

    #[test]
    fn unlabeled_session_loads_but_fails_require_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_session_tensor(dir.path(), "p0_gaze.usbl", 1, 2, 3);
        let mpath = dir.path().join("manifest.json");
        let doc = serde_json::json!({
            "name": "unlabeled",
            "modalities": [
                {"name": "gaze", "channels": 2, "samples": 3, "sample_rate": 10.0}
            ],
            "sessions": [
                {"participant_id": "p0", "label": null, "conditions": ["I"],
                 "tensors": {"gaze": "p0_gaze.usbl"}}
            ]
        });
        std::fs::write(&mpath, doc.to_string()).unwrap();
        let ds = load_dataset(&mpath).unwrap();
        assert_eq!(ds.sessions[0].label, None);
        assert!(matches!(
            ds.require_labels(),
            Err(Error::LabelMissing { .. })
        ));
    }
}
