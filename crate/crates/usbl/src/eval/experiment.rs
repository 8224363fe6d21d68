//! Cross-validation experiment harness: one method evaluated over repeated
//! stratified participant folds, with corrected summaries and a mergeable
//! results document.
//!
//! Every (repeat, fold) unit derives its own seed, so the record set is
//! identical for any parallel schedule; summaries are computed after a
//! deterministic sort. A fold whose fit or prediction fails is recorded as
//! missing and the run continues.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{dscore, run_baseline, BaselineMethod, DecodeMode, WindowKind, WindowSet};
use crate::calibrate::{calibrate, CalibrateOptions};
use crate::error::{Error, Result};
use crate::eval::folds::{make_folds, CVConfig, FoldSplit};
use crate::eval::metrics::{confusion_metrics, metric_set, MetricSet};
use crate::eval::stats::{bh_fdr, corrected_ci, corrected_ttest};
use crate::infer::derive_seed;
use crate::infer::pipeline::{fit_stage1, FitOptions};
use crate::leadfield::{load_leadfield, preprocess_leadfield, LeadField, DEFAULT_KERNEL_MULTIPLIER};
use crate::model::{ModelConfig, ModelContext, PriorKind};
use crate::tensor_io::{Condition, Dataset, Session};

const UNIT_STREAM: u64 = 0xE9A1;
const USBL_FIT_STREAM: u64 = 0xF17;
const CALIBRATION_STREAM: u64 = 0xCA1B;

/// Ridge applied to both coefficients of the D-score logistic link.
const SCALAR_LOGISTIC_RIDGE: f64 = 1e-3;

/// Chance-level nulls the corrected tests run against, in record order.
pub const METRIC_NULLS: [(&str, f64); 5] = [
    ("auc", 0.5),
    ("sensitivity", 0.5),
    ("specificity", 0.5),
    ("brier", 0.25),
    ("cross_entropy", LN_2),
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    /// The hierarchical model; `calibrate` fits the confidence scale on
    /// nested folds before prediction.
    Usbl {
        config: ModelConfig,
        #[serde(default)]
        options: FitOptions,
        #[serde(default)]
        calibrate: bool,
    },
    /// Trial-decoding baseline on one modality's window features.
    Baseline {
        algorithm: BaselineMethod,
        mode: DecodeMode,
        modality: String,
        windows: WindowKind,
    },
    /// Latency D-score with a train-fit logistic link.
    DScore { modality: String },
}

impl MethodSpec {
    pub fn method_label(&self) -> String {
        match self {
            MethodSpec::Usbl { calibrate, .. } => {
                if *calibrate {
                    "usbl_calibrated".into()
                } else {
                    "usbl".into()
                }
            }
            MethodSpec::Baseline { algorithm, mode, .. } => {
                let base = match algorithm {
                    BaselineMethod::Slda => "slda",
                    BaselineMethod::RidgeLr => "ridge_lr",
                };
                match mode {
                    DecodeMode::Recoded => base.into(),
                    DecodeMode::Direct => format!("{base}_direct"),
                }
            }
            MethodSpec::DScore { .. } => "dscore".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub participant: String,
    pub prob: f64,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldRecord {
    pub method: String,
    pub modalities: String,
    pub repeat: usize,
    pub fold: usize,
    /// `None` when the fold failed; per-metric gaps inside a `Some` mean a
    /// degenerate test composition, not a failure.
    pub metrics: Option<MetricSet>,
    pub predictions: Vec<PredictionRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub null_value: f64,
    /// Folds contributing values after missing ones are excluded.
    pub n_used: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub ci: Option<(f64, f64)>,
    /// `None` when undefined or infinite (zero variance).
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub zero_variance: bool,
    pub p_bh: Option<f64>,
    pub rejected: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub method: String,
    pub modalities: String,
    pub n_folds: usize,
    pub n_missing: usize,
    pub metrics: Vec<MetricSummary>,
}

impl ConfigSummary {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsTable {
    pub cv: CVConfig,
    /// Design train/test sizes entering the variance correction.
    pub n1: f64,
    pub n2: f64,
    pub records: Vec<FoldRecord>,
    pub summaries: Vec<ConfigSummary>,
}

impl ResultsTable {
    /// Appends another table evaluated under the same fold design, keeping
    /// records grouped per configuration.
    pub fn merge(mut self, other: ResultsTable) -> Result<ResultsTable> {
        if self.cv != other.cv || self.n1 != other.n1 || self.n2 != other.n2 {
            return Err(Error::InvalidEval(
                "cannot merge results from different fold designs".into(),
            ));
        }
        for s in &other.summaries {
            if self
                .summaries
                .iter()
                .any(|t| t.method == s.method && t.modalities == s.modalities)
            {
                return Err(Error::InvalidEval(format!(
                    "duplicate configuration {} on {}",
                    s.method, s.modalities
                )));
            }
        }
        self.records.extend(other.records);
        self.summaries.extend(other.summaries);
        sort_records(&mut self.records);
        Ok(self)
    }

    /// Benjamini-Hochberg adjustment of the per-configuration AUC p-values.
    pub fn apply_bh(&mut self, q: f64) -> Result<()> {
        let mut holders = Vec::new();
        let mut ps = Vec::new();
        for (i, s) in self.summaries.iter().enumerate() {
            if let Some(p) = s.metric("auc").and_then(|m| m.p) {
                holders.push(i);
                ps.push(p);
            }
        }
        if ps.is_empty() {
            return Ok(());
        }
        let (rejected, adjusted) = bh_fdr(&ps, q)?;
        for ((&i, adj), rej) in holders.iter().zip(adjusted).zip(rejected) {
            let m = self.summaries[i]
                .metrics
                .iter_mut()
                .find(|m| m.metric == "auc")
                .expect("holder index came from an auc summary");
            m.p_bh = Some(adj);
            m.rejected = Some(rej);
        }
        Ok(())
    }

    /// Sensitivity/specificity over the pooled test predictions of one
    /// configuration, the alternative to the per-fold default.
    pub fn pooled_confusion(
        &self,
        method: &str,
        modalities: &str,
        threshold: f64,
    ) -> (Option<f64>, Option<f64>) {
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for r in &self.records {
            if r.method == method && r.modalities == modalities && r.metrics.is_some() {
                for p in &r.predictions {
                    probs.push(p.prob);
                    labels.push(p.label);
                }
            }
        }
        if probs.is_empty() {
            return (None, None);
        }
        confusion_metrics(&probs, &labels, threshold)
    }

    pub fn summary(&self, method: &str, modalities: &str) -> Option<&ConfigSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.modalities == modalities)
    }
}

fn sort_records(records: &mut [FoldRecord]) {
    records.sort_by(|a, b| {
        (&a.method, &a.modalities, a.repeat, a.fold)
            .cmp(&(&b.method, &b.modalities, b.repeat, b.fold))
    });
}

/// Runs one method over the full repeated-CV grid. Fold units execute in
/// parallel with derived seeds; the output is byte-identical for any thread
/// count. Configuration errors surface immediately, per-fold failures are
/// recorded as missing.
pub fn run_experiment(
    dataset: &Dataset,
    spec: &MethodSpec,
    cv: &CVConfig,
) -> Result<ResultsTable> {
    dataset.require_labels()?;
    let labels: Vec<(String, u8)> = dataset
        .sessions
        .iter()
        .map(|s| (s.participant_id.clone(), s.label.expect("labels checked")))
        .collect();
    let assignment = make_folds(&labels, cv)?;
    let modalities_label = validate_spec(dataset, spec)?;
    let leadfield = load_leadfield_if_needed(dataset, spec)?;
    let method_label = spec.method_label();

    let by_id: BTreeMap<&str, &Session> = dataset
        .sessions
        .iter()
        .map(|s| (s.participant_id.as_str(), s))
        .collect();

    let mut records: Vec<FoldRecord> = assignment
        .splits
        .par_iter()
        .map(|split| {
            let unit_seed = derive_seed(
                derive_seed(cv.seed, UNIT_STREAM, 0),
                split.repeat as u64,
                split.fold as u64,
            );
            let outcome = run_fold(dataset, &by_id, split, spec, leadfield.as_ref(), unit_seed);
            let (metrics, predictions, error) = match outcome {
                Ok(predictions) => {
                    let probs: Vec<f64> = predictions.iter().map(|p| p.prob).collect();
                    let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
                    match metric_set(&probs, &labels) {
                        Ok(m) => (Some(m), predictions, None),
                        Err(e) => (None, Vec::new(), Some(e.to_string())),
                    }
                }
                Err(e) => (None, Vec::new(), Some(e.to_string())),
            };
            FoldRecord {
                method: method_label.clone(),
                modalities: modalities_label.clone(),
                repeat: split.repeat,
                fold: split.fold,
                metrics,
                predictions,
                error,
            }
        })
        .collect();
    sort_records(&mut records);

    let summary = summarize_config(
        &method_label,
        &modalities_label,
        &records,
        cv,
        assignment.n1,
        assignment.n2,
    );
    Ok(ResultsTable {
        cv: *cv,
        n1: assignment.n1,
        n2: assignment.n2,
        records,
        summaries: vec![summary],
    })
}

/// Up-front spec/dataset coupling checks; returns the modalities label.
fn validate_spec(dataset: &Dataset, spec: &MethodSpec) -> Result<String> {
    match spec {
        MethodSpec::Usbl { config, .. } => {
            let regions = leadfield_regions(dataset, config)?;
            let ctx = ModelContext::new(config, &dataset.modalities, regions)?;
            Ok(ctx
                .entries
                .iter()
                .map(|e| e.name.as_str())
                .collect::<Vec<_>>()
                .join("+"))
        }
        MethodSpec::Baseline { modality, .. } => {
            dataset.modality(modality)?;
            Ok(modality.clone())
        }
        MethodSpec::DScore { modality } => {
            let shape = dataset.modality(modality)?;
            if shape.channels != 1 || shape.samples != 1 {
                return Err(Error::InvalidEval(format!(
                    "d-score needs a 1 x 1 latency modality, '{}' is {} x {}",
                    modality, shape.channels, shape.samples
                )));
            }
            Ok(modality.clone())
        }
    }
}

fn needs_leadfield(config: &ModelConfig) -> bool {
    config.include_eeg
        && config
            .modalities
            .iter()
            .any(|m| m.prior == PriorKind::EegDugh)
}

fn leadfield_regions(dataset: &Dataset, config: &ModelConfig) -> Result<Option<usize>> {
    if !needs_leadfield(config) {
        return Ok(None);
    }
    let path = dataset.leadfield_path.as_ref().ok_or_else(|| {
        Error::InvalidEval("model config needs a lead field, dataset has none".into())
    })?;
    Ok(Some(load_leadfield(path)?.region_count))
}

fn load_leadfield_if_needed(dataset: &Dataset, spec: &MethodSpec) -> Result<Option<LeadField>> {
    let MethodSpec::Usbl { config, .. } = spec else {
        return Ok(None);
    };
    if !needs_leadfield(config) {
        return Ok(None);
    }
    let path = dataset.leadfield_path.as_ref().ok_or_else(|| {
        Error::InvalidEval("model config needs a lead field, dataset has none".into())
    })?;
    let raw = load_leadfield(path)?;
    Ok(Some(preprocess_leadfield(&raw, DEFAULT_KERNEL_MULTIPLIER)?))
}

fn run_fold(
    dataset: &Dataset,
    by_id: &BTreeMap<&str, &Session>,
    split: &FoldSplit,
    spec: &MethodSpec,
    leadfield: Option<&LeadField>,
    unit_seed: u64,
) -> Result<Vec<PredictionRecord>> {
    let train: Vec<Session> = split
        .train
        .iter()
        .map(|id| (*by_id[id.as_str()]).clone())
        .collect();
    let test: Vec<&Session> = split.test.iter().map(|id| by_id[id.as_str()]).collect();

    let probs = match spec {
        MethodSpec::Usbl {
            config,
            options,
            calibrate: with_scale,
        } => {
            let mut fit_opts = *options;
            fit_opts.schedule.seed = derive_seed(unit_seed, USBL_FIT_STREAM, 0);
            let model = if *with_scale {
                let cal_opts = CalibrateOptions {
                    fit: fit_opts,
                    ..CalibrateOptions::default()
                };
                calibrate(
                    &train,
                    &dataset.modalities,
                    leadfield,
                    config,
                    &cal_opts,
                    derive_seed(unit_seed, CALIBRATION_STREAM, 0),
                )?
                .model
            } else {
                fit_stage1(&train, &dataset.modalities, leadfield, config, &fit_opts)?.model
            };
            test.iter()
                .map(|s| model.predict_session(s))
                .collect::<Result<Vec<f64>>>()?
        }
        MethodSpec::Baseline {
            algorithm,
            mode,
            modality,
            windows,
        } => {
            let owned_test: Vec<Session> = test.iter().map(|s| (*s).clone()).collect();
            run_baseline(
                &train,
                &owned_test,
                dataset.modality(modality)?,
                &WindowSet::of(*windows),
                *algorithm,
                *mode,
                unit_seed,
            )?
        }
        MethodSpec::DScore { modality } => {
            let mut train_d = Vec::with_capacity(train.len());
            let mut train_y = Vec::with_capacity(train.len());
            for s in &train {
                train_d.push(session_dscore(s, modality)?);
                train_y.push(f64::from(s.label.ok_or(Error::LabelMissing {
                    participant: s.participant_id.clone(),
                })?));
            }
            let link = ScalarLogistic::fit(&train_d, &train_y);
            test.iter()
                .map(|s| Ok(link.prob(session_dscore(s, modality)?)))
                .collect::<Result<Vec<f64>>>()?
        }
    };

    Ok(test
        .iter()
        .zip(probs)
        .map(|(s, prob)| PredictionRecord {
            participant: s.participant_id.clone(),
            prob,
            label: s.label.expect("labels checked before the fold loop"),
        })
        .collect())
}

fn session_dscore(session: &Session, modality: &str) -> Result<f64> {
    let trials = session.trials(modality)?;
    let pairs: Vec<(f64, Condition)> = trials
        .iter()
        .zip(&session.conditions)
        .map(|(t, &c)| (t[(0, 0)], c))
        .collect();
    Ok(dscore(&pairs, true)?.d)
}

/// Two-parameter logistic link on a standardized scalar, fit by damped
/// Newton with a small ridge so separable training scores stay finite.
struct ScalarLogistic {
    offset: f64,
    scale: f64,
    intercept: f64,
    slope: f64,
}

impl ScalarLogistic {
    fn fit(xs: &[f64], ys: &[f64]) -> ScalarLogistic {
        let n = xs.len() as f64;
        let offset = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - offset).powi(2)).sum::<f64>() / n;
        let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        let z: Vec<f64> = xs.iter().map(|x| (x - offset) / scale).collect();

        let (mut b0, mut b1) = (0.0f64, 0.0f64);
        for _ in 0..100 {
            let (mut g0, mut g1) = (-SCALAR_LOGISTIC_RIDGE * b0, -SCALAR_LOGISTIC_RIDGE * b1);
            let (mut h00, mut h01, mut h11) = (
                SCALAR_LOGISTIC_RIDGE,
                0.0,
                SCALAR_LOGISTIC_RIDGE,
            );
            for (&x, &y) in z.iter().zip(ys) {
                let p = logistic(b0 + b1 * x);
                let r = y - p;
                let w = p * (1.0 - p);
                g0 += r;
                g1 += r * x;
                h00 += w;
                h01 += w * x;
                h11 += w * x * x;
            }
            let det = h00 * h11 - h01 * h01;
            if det.abs() < 1e-300 {
                break;
            }
            let d0 = (h11 * g0 - h01 * g1) / det;
            let d1 = (h00 * g1 - h01 * g0) / det;
            b0 += d0;
            b1 += d1;
            if d0.abs().max(d1.abs()) < 1e-12 {
                break;
            }
        }
        ScalarLogistic {
            offset,
            scale,
            intercept: b0,
            slope: b1,
        }
    }

    fn prob(&self, x: f64) -> f64 {
        logistic(self.intercept + self.slope * (x - self.offset) / self.scale)
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn summarize_config(
    method: &str,
    modalities: &str,
    records: &[FoldRecord],
    cv: &CVConfig,
    n1: f64,
    n2: f64,
) -> ConfigSummary {
    let n_missing = records.iter().filter(|r| r.metrics.is_none()).count();
    let metrics = METRIC_NULLS
        .iter()
        .map(|&(name, null)| {
            let values: Vec<f64> = records
                .iter()
                .filter_map(|r| r.metrics.as_ref())
                .filter_map(|m| metric_value(m, name))
                .collect();
            summarize_metric(name, null, &values, cv, n1, n2)
        })
        .collect();
    ConfigSummary {
        method: method.to_string(),
        modalities: modalities.to_string(),
        n_folds: records.len(),
        n_missing,
        metrics,
    }
}

fn metric_value(m: &MetricSet, name: &str) -> Option<f64> {
    match name {
        "auc" => m.auc,
        "sensitivity" => m.sensitivity,
        "specificity" => m.specificity,
        "brier" => m.brier,
        "cross_entropy" => m.cross_entropy,
        _ => unreachable!("metric names come from METRIC_NULLS"),
    }
}

fn summarize_metric(
    name: &str,
    null: f64,
    values: &[f64],
    cv: &CVConfig,
    n1: f64,
    n2: f64,
) -> MetricSummary {
    let mut out = MetricSummary {
        metric: name.to_string(),
        null_value: null,
        n_used: values.len(),
        mean: None,
        sd: None,
        ci: None,
        t: None,
        p: None,
        zero_variance: false,
        p_bh: None,
        rejected: None,
    };
    match values.len() {
        0 => {}
        1 => out.mean = Some(values[0]),
        _ => {
            let test = corrected_ttest(values, cv.k, cv.r, n1, n2, null)
                .expect("two or more finite fold values");
            let ci = corrected_ci(values, cv.k, cv.r, n1, n2, 0.95)
                .expect("two or more finite fold values");
            out.mean = Some(test.mean);
            out.sd = Some(test.sd);
            out.ci = Some(ci);
            out.t = test.t.is_finite().then_some(test.t);
            out.p = Some(test.p);
            out.zero_variance = test.zero_variance;
        }
    }
    out
}

// ---- persistence ----

pub fn save_results<P: AsRef<Path>>(table: &ResultsTable, path: P) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, table)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_results<P: AsRef<Path>>(path: P) -> Result<ResultsTable> {
    let file = File::open(path.as_ref())?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Flat per-fold CSV: one row per record, empty cells for missing metrics.
pub fn write_fold_csv<P: AsRef<Path>>(table: &ResultsTable, path: P) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    w.write_record([
        "method",
        "modalities",
        "repeat",
        "fold",
        "status",
        "auc",
        "sensitivity",
        "specificity",
        "brier",
        "cross_entropy",
        "error",
    ])
    .map_err(csv_error)?;
    for r in &table.records {
        let cell = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let (status, m) = match &r.metrics {
            Some(m) => ("ok", Some(m)),
            None => ("failed", None),
        };
        w.write_record([
            r.method.as_str(),
            r.modalities.as_str(),
            &r.repeat.to_string(),
            &r.fold.to_string(),
            status,
            &cell(m.and_then(|m| m.auc)),
            &cell(m.and_then(|m| m.sensitivity)),
            &cell(m.and_then(|m| m.specificity)),
            &cell(m.and_then(|m| m.brier)),
            &cell(m.and_then(|m| m.cross_entropy)),
            r.error.as_deref().unwrap_or(""),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidEval(format!("csv output failed: {e}"))
}
