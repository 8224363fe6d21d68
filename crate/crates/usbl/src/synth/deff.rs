//! Design-effect estimation for clustered trials.
//!
//! Trials within a session are correlated, so the nominal trial count
//! overstates the information available. The estimate projects pooled trial
//! features onto leading principal components, measures a one-way intraclass
//! correlation per component with sessions as clusters, and keeps the
//! worst-case design effect.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor_io::Dataset;

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DeffEstimate {
    pub icc_per_pc: Vec<f64>,
    pub deff_per_pc: Vec<f64>,
    /// Worst case over components.
    pub deff: f64,
    /// Effective independent trials per session, `mean_trials / deff`.
    pub n_eff_per_session: f64,
    pub mean_trials_per_session: f64,
    pub requested_pcs: usize,
}

/// Top eigenpairs of `cov` by power iteration with deflation. The start
/// vector is a fixed ramp so results do not depend on an RNG.
fn top_principal_directions(cov: &DMatrix<f64>, count: usize) -> Vec<(f64, DVector<f64>)> {
    let p = cov.nrows();
    let mut work = cov.clone();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = DVector::from_fn(p, |i, _| 1.0 + 0.001 * i as f64);
        v /= v.norm();
        let mut eigenvalue = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let w = &work * &v;
            let norm = w.norm();
            if norm < 1e-300 {
                eigenvalue = 0.0;
                break;
            }
            let next = w / norm;
            let delta = (&next - &v).norm();
            eigenvalue = next.dot(&(&work * &next));
            v = next;
            if delta < POWER_TOL {
                break;
            }
        }
        for i in 0..p {
            for j in 0..p {
                work[(i, j)] -= eigenvalue * v[i] * v[j];
            }
        }
        out.push((eigenvalue, v));
    }
    out
}

/// One-way ANOVA intraclass correlation with the mean cluster size in the
/// denominator, clipped into [0, 1].
fn icc_one_way(scores: &[f64], cluster_sizes: &[usize], mean_size: f64) -> f64 {
    let n = scores.len() as f64;
    let clusters = cluster_sizes.len() as f64;
    let grand = scores.iter().sum::<f64>() / n;
    let mut between = 0.0;
    let mut within = 0.0;
    let mut offset = 0;
    for &m in cluster_sizes {
        let group = &scores[offset..offset + m];
        let gm = group.iter().sum::<f64>() / m as f64;
        between += m as f64 * (gm - grand).powi(2);
        within += group.iter().map(|s| (s - gm).powi(2)).sum::<f64>();
        offset += m;
    }
    let msb = between / (clusters - 1.0);
    let msw = within / (n - clusters);
    let denom = msb + (mean_size - 1.0) * msw;
    if !(denom > 0.0) {
        return 0.0;
    }
    ((msb - msw) / denom).clamp(0.0, 1.0)
}

/// Kish design effect of a modality's trials: `deff_pc = 1 + (m - 1) * icc_pc`
/// over centered principal-component scores, keeping the maximum.
pub fn kish_deff(dataset: &Dataset, modality: &str, n_pcs: usize) -> Result<DeffEstimate> {
    if n_pcs == 0 {
        return Err(Error::InvalidConfig("n_pcs must be >= 1".into()));
    }
    let shape = dataset.modality(modality)?;
    if dataset.sessions.len() < 2 {
        return Err(Error::DomainError(
            "design effect needs at least 2 sessions".into(),
        ));
    }
    let p = shape.channels * shape.samples;
    let mut cluster_sizes = Vec::with_capacity(dataset.sessions.len());
    let mut rows: Vec<f64> = Vec::new();
    for session in &dataset.sessions {
        let segs = session.trials(modality)?;
        if segs.len() < 2 {
            return Err(Error::DomainError(format!(
                "session {} has fewer than 2 trials",
                session.participant_id
            )));
        }
        cluster_sizes.push(segs.len());
        for seg in segs {
            for c in 0..shape.channels {
                for k in 0..shape.samples {
                    rows.push(seg[(c, k)]);
                }
            }
        }
    }
    let n = cluster_sizes.iter().sum::<usize>();
    let mut x = DMatrix::from_row_slice(n, p, &rows);
    // Center each feature; no scaling.
    for j in 0..p {
        let mean = x.column(j).sum() / n as f64;
        for i in 0..n {
            x[(i, j)] -= mean;
        }
    }

    let usable = n_pcs.min(p).min(n - 1);
    if usable < n_pcs {
        eprintln!("kish_deff: only {usable} components available, reducing from {n_pcs}");
    }
    let cov = x.transpose() * &x / n as f64;
    let directions = top_principal_directions(&cov, usable);

    let mean_size = n as f64 / cluster_sizes.len() as f64;
    let mut icc_per_pc = Vec::with_capacity(usable);
    let mut deff_per_pc = Vec::with_capacity(usable);
    for (_, v) in &directions {
        let scores: Vec<f64> = (0..n).map(|i| x.row(i).transpose().dot(v)).collect();
        let icc = icc_one_way(&scores, &cluster_sizes, mean_size);
        icc_per_pc.push(icc);
        deff_per_pc.push(1.0 + (mean_size - 1.0) * icc);
    }
    let deff = deff_per_pc.iter().cloned().fold(f64::NAN, f64::max);
    Ok(DeffEstimate {
        icc_per_pc,
        deff_per_pc,
        deff,
        n_eff_per_session: mean_size / deff,
        mean_trials_per_session: mean_size,
        requested_pcs: n_pcs,
    })
}
