//! Fitted-model persistence: a JSON document next to a tensor file holding
//! the packed parameter vector (and curvature when available), plus an
//! optional tensor file of confidence-scale posterior draws.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::leadfield::CovarianceEstimate;
use crate::model::config::{ModalityEntry, ModelConfig, ModelContext, PriorKind};
use crate::model::params::{ModelParameters, ParamLayout};
use crate::model::scoring::{assemble_scoring_model, ScoringModel};
use crate::tensor_io::format;
use crate::tensor_io::{apply_standardizer, Session, Standardizer};

#[derive(Debug, Clone)]
pub struct FittedModel {
    pub config: ModelConfig,
    /// Resolved modality entries, in model order.
    pub entries: Vec<ModalityEntry>,
    /// Training standardizers, aligned with `entries`.
    pub standardizers: Vec<Standardizer>,
    /// Present when an EEG matrix-prior modality was fit.
    pub covariances: Option<CovarianceEstimate>,
    pub params: ModelParameters,
    /// Diagonal curvature of the negative log posterior at the mode.
    pub curvature: Option<Vec<f64>>,
    pub curvature_flagged: bool,
    /// Confidence scale applied at prediction time; 1.0 until calibration.
    pub omega: f64,
    pub omega_samples: Option<Vec<f64>>,
}

impl FittedModel {
    pub fn context(&self) -> Result<ModelContext> {
        ModelContext::from_entries(
            self.entries.clone(),
            self.config.hyperpriors,
            self.config.innovation_scale_prior,
        )
    }

    pub fn scoring(&self) -> Result<ScoringModel> {
        let ctx = self.context()?;
        let data_cov = self.covariances.as_ref().map(|c| c.data_matrix());
        let mut params = self.params.clone();
        params.omega = self.omega;
        assemble_scoring_model(&params, &ctx, data_cov.as_ref())
    }

    pub fn standardize(&self, session: &Session) -> Result<Session> {
        let mut out = session.clone();
        for std in &self.standardizers {
            out = apply_standardizer(std, &out)?;
        }
        Ok(out)
    }

    /// Trial-average evidence of a raw session, before the confidence scale.
    pub fn session_evidence(&self, session: &Session) -> Result<f64> {
        let standardized = self.standardize(session)?;
        self.scoring()?.session_evidence(&standardized)
    }

    pub fn predict_session(&self, session: &Session) -> Result<f64> {
        let standardized = self.standardize(session)?;
        self.scoring()?.predict(&standardized)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StandardizerDoc {
    modality: String,
    channel_offsets: Vec<f64>,
    channel_scales: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FittedModelDoc {
    config: ModelConfig,
    modalities: Vec<ModalityEntry>,
    standardizers: Vec<StandardizerDoc>,
    covariances: Option<CovarianceEstimate>,
    omega: f64,
    curvature_flagged: bool,
    params_file: String,
    omega_samples_file: Option<String>,
}

fn sibling_name(path: &Path, suffix: &str) -> Result<String> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidConfig(format!("bad artifact path {}", path.display())))?;
    Ok(format!("{stem}.{suffix}"))
}

pub fn save_fitted_model<P: AsRef<Path>>(model: &FittedModel, path: P) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().map(PathBuf::from).unwrap_or_default();
    let ctx = model.context()?;
    let layout = ParamLayout::for_context(&ctx);
    let packed = layout.pack(&model.params)?;

    let params_file = sibling_name(path, "params.usbl")?;
    {
        let mut w = BufWriter::new(File::create(dir.join(&params_file))?);
        let vals: Vec<f32> = packed.iter().map(|&v| v as f32).collect();
        format::write_tensor_to(&mut w, &[vals.len() as u64], &vals)?;
        if let Some(curv) = &model.curvature {
            let vals: Vec<f32> = curv.iter().map(|&v| v as f32).collect();
            format::write_tensor_to(&mut w, &[vals.len() as u64], &vals)?;
        }
        w.flush()?;
    }

    let omega_samples_file = match &model.omega_samples {
        Some(samples) => {
            let name = sibling_name(path, "omega.usbl")?;
            let mut w = BufWriter::new(File::create(dir.join(&name))?);
            let vals: Vec<f32> = samples.iter().map(|&v| v as f32).collect();
            format::write_tensor_to(&mut w, &[vals.len() as u64], &vals)?;
            w.flush()?;
            Some(name)
        }
        None => None,
    };

    let doc = FittedModelDoc {
        config: model.config.clone(),
        modalities: model.entries.clone(),
        standardizers: model
            .standardizers
            .iter()
            .map(|s| StandardizerDoc {
                modality: s.modality.clone(),
                channel_offsets: s.channel_offsets.iter().copied().collect(),
                channel_scales: s.channel_scales.iter().copied().collect(),
            })
            .collect(),
        covariances: model.covariances.clone(),
        omega: model.omega,
        curvature_flagged: model.curvature_flagged,
        params_file,
        omega_samples_file,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_fitted_model<P: AsRef<Path>>(path: P) -> Result<FittedModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.into() },
        _ => Error::Io(e),
    })?;
    let doc: FittedModelDoc = serde_json::from_reader(BufReader::new(file))?;
    let dir = path.parent().map(PathBuf::from).unwrap_or_default();

    let ctx = ModelContext::from_entries(
        doc.modalities.clone(),
        doc.config.hyperpriors,
        doc.config.innovation_scale_prior,
    )?;
    let layout = ParamLayout::for_context(&ctx);

    let params_path = dir.join(&doc.params_file);
    let mut r = BufReader::new(File::open(&params_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile {
            path: params_path.clone(),
        },
        _ => Error::Io(e),
    })?);
    let (dims, vals) = format::read_tensor_from(&mut r)?;
    if dims.len() != 1 || vals.len() != layout.len {
        return Err(Error::ShapeMismatch {
            modality: "packed parameters".into(),
            expected: format!("{}", layout.len),
            found: format!("{:?}", dims),
        });
    }
    let flat = DVector::<f64>::from_iterator(vals.len(), vals.iter().map(|&v| v as f64));
    let params = layout.unpack(&flat)?;
    let mut probe = [0u8; 1];
    let has_curvature = {
        // Peek: a second record starts with the magic.
        let n = r.read(&mut probe)?;
        n == 1
    };
    let curvature = if has_curvature {
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        let mut buf = Vec::with_capacity(1 + rest.len());
        buf.push(probe[0]);
        buf.extend_from_slice(&rest);
        let mut cur = std::io::Cursor::new(buf);
        let (cdims, cvals) = format::read_tensor_from(&mut cur)?;
        if cdims.len() != 1 || cvals.len() != layout.len {
            return Err(Error::ShapeMismatch {
                modality: "curvature".into(),
                expected: format!("{}", layout.len),
                found: format!("{:?}", cdims),
            });
        }
        Some(cvals.iter().map(|&v| v as f64).collect())
    } else {
        None
    };

    let omega_samples = match &doc.omega_samples_file {
        Some(name) => {
            let p = dir.join(name);
            let (sdims, svals) = format::read_tensor(&p)?;
            if sdims.len() != 1 {
                return Err(Error::ShapeMismatch {
                    modality: "omega samples".into(),
                    expected: "rank-1 tensor".into(),
                    found: format!("{sdims:?}"),
                });
            }
            Some(svals.iter().map(|&v| v as f64).collect())
        }
        None => None,
    };

    let mut standardizers = Vec::with_capacity(doc.standardizers.len());
    for s in doc.standardizers {
        standardizers.push(Standardizer {
            modality: s.modality,
            channel_offsets: DVector::from_vec(s.channel_offsets),
            channel_scales: DVector::from_vec(s.channel_scales),
        });
    }

    let mut model = FittedModel {
        config: doc.config,
        entries: doc.modalities,
        standardizers,
        covariances: doc.covariances,
        params,
        curvature,
        curvature_flagged: doc.curvature_flagged,
        omega: doc.omega,
        omega_samples,
    };
    model.params.omega = model.omega;
    if model
        .entries
        .iter()
        .any(|e| e.prior == PriorKind::EegDugh)
        && model.covariances.is_none()
    {
        return Err(Error::Manifest(
            "artifact has an EEG matrix-prior modality but no covariance estimates".into(),
        ));
    }
    Ok(model)
}
