//! The full log posterior and its analytic gradient.
//!
//! Trial evidence is mirror-constrained: incongruent trials add the weighted
//! inner products, congruent trials subtract them, and there is no intercept.
//! Session evidence averages trials, so the data term only ever touches each
//! session through its signed mean tensor, precomputed once per split.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::leadfield::{matrix_normal_grad_terms, LeadField, RegionProjections};
use crate::model::config::{ModelContext, PriorKind};
use crate::model::params::{BlockLayout, ModalityBlock, ModelParameters, ParamLayout};
use crate::priors::{
    grw_covariance, grw_logdensity_grad, half_distribution_logdensity_grad, normal_logdensity,
    GrwParams, HalfKind,
};
use crate::tensor_io::Session;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// `(1/T) sum_t sign(t) X_t` for one modality of one session.
pub fn signed_mean(session: &Session, modality: &str) -> Result<DMatrix<f64>> {
    let trials = session.trials(modality)?;
    if trials.is_empty() {
        return Err(Error::DomainError(format!(
            "session {} has no trials",
            session.participant_id
        )));
    }
    let mut acc = DMatrix::zeros(trials[0].nrows(), trials[0].ncols());
    for (data, condition) in trials.iter().zip(&session.conditions) {
        acc += data * condition.sign();
    }
    Ok(acc / trials.len() as f64)
}

#[derive(Debug, Clone)]
pub struct PreparedSession {
    pub participant_id: String,
    pub y: f64,
    /// Signed mean per modality, in model order; pre-multiplied by the
    /// inverse sensor covariance for matrix-prior EEG slots.
    pub signed_means: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub sessions: Vec<PreparedSession>,
}

/// Builds the per-session signed means for a training split. `data_cov_chols`
/// is aligned with the model's modality entries and must hold a factorization
/// for every EEG matrix-prior slot.
pub fn prepare_training_data(
    sessions: &[Session],
    model: &ModelContext,
    data_cov_chols: &[Option<Cholesky<f64, Dyn>>],
) -> Result<PreparedData> {
    if data_cov_chols.len() != model.entries.len() {
        return Err(Error::DomainError(
            "covariance slots do not match the modality list".into(),
        ));
    }
    let mut out = Vec::with_capacity(sessions.len());
    for sess in sessions {
        let y = sess.y().ok_or_else(|| Error::LabelMissing {
            participant: sess.participant_id.clone(),
        })?;
        let mut signed_means = Vec::with_capacity(model.entries.len());
        for (e, chol) in model.entries.iter().zip(data_cov_chols) {
            let mean = signed_mean(sess, &e.name)?;
            if mean.nrows() != e.channels || mean.ncols() != e.samples {
                return Err(Error::ShapeMismatch {
                    modality: e.name.clone(),
                    expected: format!("{} x {}", e.channels, e.samples),
                    found: format!("{} x {}", mean.nrows(), mean.ncols()),
                });
            }
            signed_means.push(match (e.prior, chol) {
                (PriorKind::EegDugh, Some(ch)) => ch.solve(&mean),
                (PriorKind::EegDugh, None) => {
                    return Err(Error::DomainError(format!(
                        "modality '{}' needs a sensor covariance factorization",
                        e.name
                    )))
                }
                _ => mean,
            });
        }
        out.push(PreparedSession {
            participant_id: sess.participant_id.clone(),
            y,
            signed_means,
        });
    }
    Ok(PreparedData { sessions: out })
}

/// Fixed matrices consumed by the EEG matrix-normal prior.
#[derive(Debug, Clone)]
pub struct DughOperators {
    pub sigma_eps: DMatrix<f64>,
    pub projections: RegionProjections,
    /// `mmin[i,j] = min(i,j) + 1`; the derivative of the random-walk
    /// covariance with respect to its innovation spread is `2 sigma_i * mmin`.
    pub mmin: DMatrix<f64>,
}

impl DughOperators {
    pub fn new(lf: &LeadField, sigma_eps: DMatrix<f64>, samples: usize) -> Result<Self> {
        if sigma_eps.nrows() != lf.n_channels() || sigma_eps.ncols() != lf.n_channels() {
            return Err(Error::ShapeMismatch {
                modality: "noise covariance".into(),
                expected: format!("{0} x {0}", lf.n_channels()),
                found: format!("{} x {}", sigma_eps.nrows(), sigma_eps.ncols()),
            });
        }
        Ok(DughOperators {
            sigma_eps,
            projections: RegionProjections::from_leadfield(lf),
            mmin: DMatrix::from_fn(samples, samples, |i, j| (i.min(j) + 1) as f64),
        })
    }
}

pub struct PosteriorContext<'a> {
    pub model: &'a ModelContext,
    pub layout: &'a ParamLayout,
    pub data: &'a PreparedData,
    /// Aligned with the modality entries; `Some` exactly for matrix-prior
    /// EEG slots.
    pub dugh: &'a [Option<DughOperators>],
}

impl<'a> PosteriorContext<'a> {
    pub fn new(
        model: &'a ModelContext,
        layout: &'a ParamLayout,
        data: &'a PreparedData,
        dugh: &'a [Option<DughOperators>],
    ) -> Result<Self> {
        if dugh.len() != model.entries.len() {
            return Err(Error::DomainError(
                "operator slots do not match the modality list".into(),
            ));
        }
        for (e, d) in model.entries.iter().zip(dugh) {
            if (e.prior == PriorKind::EegDugh) != d.is_some() {
                return Err(Error::DomainError(format!(
                    "modality '{}' and its operator slot disagree",
                    e.name
                )));
            }
            if let (Some(ops), Some(regions)) = (d, e.regions) {
                if ops.projections.region_count() != regions {
                    return Err(Error::DomainError(format!(
                        "modality '{}' expects {} regions, operators have {}",
                        e.name,
                        regions,
                        ops.projections.region_count()
                    )));
                }
            }
        }
        Ok(PosteriorContext {
            model,
            layout,
            data,
            dugh,
        })
    }
}

fn checked_exp(u: f64, context: &'static str) -> Result<f64> {
    let x = u.exp();
    if !x.is_finite() || x == 0.0 {
        return Err(Error::NonFinite {
            context,
            step: None,
        });
    }
    Ok(x)
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Weights in inner-product space: the assembled W for weight-space priors
/// and the contrast A itself for the EEG matrix prior (its signed means are
/// pre-solved, so the data term is linear in A).
fn inner_weights(params: &ModelParameters, context: &'static str) -> Result<Vec<DMatrix<f64>>> {
    params
        .blocks
        .iter()
        .map(|block| {
            Ok(match block {
                ModalityBlock::Gaussian { weights } => weights.clone(),
                ModalityBlock::Horseshoe {
                    log_global,
                    log_local,
                    raw,
                    ..
                } => {
                    let tau = checked_exp(*log_global, context)?;
                    let mut w = raw.clone();
                    for c in 0..w.nrows() {
                        let s = tau * checked_exp(log_local[c], context)?;
                        for k in 0..w.ncols() {
                            w[(c, k)] *= s;
                        }
                    }
                    w
                }
                ModalityBlock::Dugh { contrast, .. } => contrast.clone(),
                ModalityBlock::LowRank {
                    left,
                    log_global,
                    log_local,
                    raw_scales,
                    right_t,
                    ..
                } => {
                    let tau = checked_exp(*log_global, context)?;
                    let mut scaled = left.clone();
                    for j in 0..raw_scales.len() {
                        let s = tau * checked_exp(log_local[j], context)? * raw_scales[j];
                        for c in 0..scaled.nrows() {
                            scaled[(c, j)] *= s;
                        }
                    }
                    scaled * right_t
                }
            })
        })
        .collect()
}

/// Session logits under the prepared training data (ω included).
pub fn prepared_session_logits(ctx: &PosteriorContext, flat: &DVector<f64>) -> Result<Vec<f64>> {
    let params = ctx.layout.unpack(flat)?;
    let w = inner_weights(&params, "scale hyperprior")?;
    Ok(ctx
        .data
        .sessions
        .iter()
        .map(|sess| {
            params.omega
                * sess
                    .signed_means
                    .iter()
                    .zip(&w)
                    .zip(&params.alphas)
                    .map(|((s, w), a)| a * frob(s, w))
                    .sum::<f64>()
        })
        .collect())
}

/// Bernoulli log-likelihood of the prepared sessions.
pub fn log_likelihood(ctx: &PosteriorContext, flat: &DVector<f64>) -> Result<f64> {
    let z = prepared_session_logits(ctx, flat)?;
    let ll: f64 = ctx
        .data
        .sessions
        .iter()
        .zip(z)
        .map(|(sess, z)| sess.y * z - softplus(z))
        .sum();
    if !ll.is_finite() {
        return Err(Error::NonFinite {
            context: "likelihood term",
            step: None,
        });
    }
    Ok(ll)
}

pub fn log_posterior(ctx: &PosteriorContext, flat: &DVector<f64>) -> Result<f64> {
    Ok(log_posterior_with_grad(ctx, flat)?.0)
}

/// Log posterior and its gradient in the flat parameterization.
pub fn log_posterior_with_grad(
    ctx: &PosteriorContext,
    flat: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let model = ctx.model;
    let params = ctx.layout.unpack(flat)?;
    let n_mod = model.entries.len();
    let omega = params.omega;
    let score_w = inner_weights(&params, "scale hyperprior")?;

    let mut lp = 0.0;
    let mut grad = DVector::zeros(ctx.layout.len);

    // Likelihood and its pullback to inner-product space.
    let n_sessions = ctx.data.sessions.len();
    let mut g_alpha = vec![0.0; n_mod];
    let mut g_data: Vec<DMatrix<f64>> = model
        .entries
        .iter()
        .map(|e| DMatrix::zeros(e.channels, e.samples))
        .collect();
    for p in 0..n_sessions {
        let sess = &ctx.data.sessions[p];
        let mut z = 0.0;
        let mut inner = vec![0.0; n_mod];
        for mi in 0..n_mod {
            inner[mi] = frob(&sess.signed_means[mi], &score_w[mi]);
            z += params.alphas[mi] * inner[mi];
        }
        z *= omega;
        lp += sess.y * z - softplus(z);
        let gz = (sess.y - sigmoid(z)) * omega;
        for mi in 0..n_mod {
            g_alpha[mi] += gz * inner[mi];
            g_data[mi] += &sess.signed_means[mi] * (gz * params.alphas[mi]);
        }
    }
    if !lp.is_finite() {
        return Err(Error::NonFinite {
            context: "likelihood term",
            step: None,
        });
    }

    for mi in 0..n_mod {
        let entry = &model.entries[mi];
        let mlay = &ctx.layout.modalities[mi];
        let alpha = params.alphas[mi];
        lp += normal_logdensity(alpha, 1.0);
        grad[mlay.alpha] = g_alpha[mi] - alpha;
        let (c, k) = (entry.channels, entry.samples);

        match (&params.blocks[mi], &mlay.block) {
            (ModalityBlock::Gaussian { weights }, BlockLayout::Gaussian { weights: wr }) => {
                for row in 0..c {
                    for col in 0..k {
                        let w = weights[(row, col)];
                        lp += normal_logdensity(w, 1.0);
                        grad[wr.start + row * k + col] = g_data[mi][(row, col)] - w;
                    }
                }
            }
            (
                ModalityBlock::Horseshoe {
                    log_global,
                    log_local,
                    raw,
                    log_innovation,
                },
                BlockLayout::Horseshoe {
                    log_global: lg,
                    log_local: ll,
                    raw: rr,
                    log_innovation: li,
                },
            ) => {
                let tau = checked_exp(*log_global, "scale hyperprior")?;
                let mut g_log_tau = 0.0;
                let mut raw_grad = DMatrix::zeros(c, k);
                for row in 0..c {
                    let lambda = checked_exp(log_local[row], "scale hyperprior")?;
                    let mut g_log_lambda = 0.0;
                    for col in 0..k {
                        let gd = g_data[mi][(row, col)];
                        let w = score_w[mi][(row, col)];
                        g_log_tau += gd * w;
                        g_log_lambda += gd * w;
                        raw_grad[(row, col)] = gd * tau * lambda;
                    }
                    let (pv, pg) = half_distribution_logdensity_grad(
                        HalfKind::Cauchy,
                        model.hyper.half_cauchy_scale_local,
                        None,
                        lambda,
                    )?;
                    lp += pv + log_local[row];
                    grad[ll.start + row] = g_log_lambda + lambda * pg + 1.0;
                }
                match (log_innovation, li) {
                    (Some(log_si), Some(li)) => {
                        let si = checked_exp(*log_si, "scale hyperprior")?;
                        let grwp = GrwParams {
                            intercept_scale: 1.0,
                            innovation_scale: si,
                        };
                        let mut g_si = 0.0;
                        let mut rowbuf = vec![0.0; k];
                        for row in 0..c {
                            for col in 0..k {
                                rowbuf[col] = raw[(row, col)];
                            }
                            let (v, grow, gsi) = grw_logdensity_grad(&rowbuf, &grwp)?;
                            lp += v;
                            g_si += gsi;
                            for col in 0..k {
                                raw_grad[(row, col)] += grow[col];
                            }
                        }
                        let (hv, hg) = half_distribution_logdensity_grad(
                            HalfKind::Normal,
                            model.innovation_scale_prior,
                            None,
                            si,
                        )?;
                        lp += hv + log_si;
                        grad[*li] = si * (g_si + hg) + 1.0;
                    }
                    (None, None) => {
                        for row in 0..c {
                            for col in 0..k {
                                let b = raw[(row, col)];
                                lp += normal_logdensity(b, 1.0);
                                raw_grad[(row, col)] -= b;
                            }
                        }
                    }
                    _ => unreachable!("layout and state built from the same context"),
                }
                for row in 0..c {
                    for col in 0..k {
                        grad[rr.start + row * k + col] = raw_grad[(row, col)];
                    }
                }
                let (tv, tg) = half_distribution_logdensity_grad(
                    HalfKind::Cauchy,
                    model.hyper.half_cauchy_scale_global,
                    None,
                    tau,
                )?;
                lp += tv + log_global;
                grad[*lg] = g_log_tau + tau * tg + 1.0;
            }
            (
                ModalityBlock::Dugh {
                    contrast,
                    log_region_scales,
                    log_innovation,
                },
                BlockLayout::Dugh {
                    contrast: ar,
                    log_region_scales: gr,
                    log_innovation: li,
                },
            ) => {
                let ops = ctx.dugh[mi].as_ref().expect("checked at context build");
                let gammas: Vec<f64> = log_region_scales
                    .iter()
                    .map(|&u| checked_exp(u, "scale hyperprior"))
                    .collect::<Result<_>>()?;
                let si = checked_exp(*log_innovation, "scale hyperprior")?;
                let sigma_u = ops.projections.spatial_covariance(&gammas, &ops.sigma_eps)?;
                let sigma_v = grw_covariance(k, 1.0, si);
                let terms = matrix_normal_grad_terms(contrast, &sigma_u, &sigma_v)?;
                lp += terms.value;
                for row in 0..c {
                    for col in 0..k {
                        grad[ar.start + row * k + col] =
                            g_data[mi][(row, col)] + terms.grad_a[(row, col)];
                    }
                }
                for (r, &gamma) in gammas.iter().enumerate() {
                    let d_gamma =
                        2.0 * gamma * frob(&terms.grad_sigma_u, &ops.projections.projections[r]);
                    let (pv, pg) = half_distribution_logdensity_grad(
                        HalfKind::StudentT,
                        model.hyper.half_student_t_scale,
                        Some(model.hyper.half_student_t_df),
                        gamma,
                    )?;
                    lp += pv + log_region_scales[r];
                    grad[gr.start + r] = gamma * (d_gamma + pg) + 1.0;
                }
                let d_si = 2.0 * si * frob(&terms.grad_sigma_v, &ops.mmin);
                let (hv, hg) = half_distribution_logdensity_grad(
                    HalfKind::Normal,
                    model.innovation_scale_prior,
                    None,
                    si,
                )?;
                lp += hv + log_innovation;
                grad[*li] = si * (d_si + hg) + 1.0;
            }
            (
                ModalityBlock::LowRank {
                    left,
                    log_global,
                    log_local,
                    raw_scales,
                    right_t,
                    log_innovation,
                },
                BlockLayout::LowRank {
                    left: ur,
                    log_global: lg,
                    log_local: ll,
                    raw_scales: sr,
                    right_t: vr,
                    log_innovation: li,
                },
            ) => {
                let rank = raw_scales.len();
                let tau = checked_exp(*log_global, "scale hyperprior")?;
                let lambdas: Vec<f64> = log_local
                    .iter()
                    .map(|&u| checked_exp(u, "scale hyperprior"))
                    .collect::<Result<_>>()?;
                let scales =
                    ModelParameters::lowrank_scales(*log_global, log_local, raw_scales);

                // Pullbacks of the data term through W = U diag(s) V^T.
                let g = &g_data[mi];
                let gu_part = g * right_t.transpose(); // C x r
                let gv_part = left.transpose() * g; // r x K
                let mut g_s: DVector<f64> = DVector::zeros(rank);
                for j in 0..rank {
                    g_s[j] = (0..k).map(|col| gv_part[(j, col)] * right_t[(j, col)]).sum();
                }

                let mut g_log_tau = 0.0;
                for j in 0..rank {
                    let data_s = g_s[j] * scales[j];
                    g_log_tau += data_s;
                    let (lv, lgm) = half_distribution_logdensity_grad(
                        HalfKind::Cauchy,
                        model.hyper.half_cauchy_scale_local,
                        None,
                        lambdas[j],
                    )?;
                    lp += lv + log_local[j];
                    grad[ll.start + j] = data_s + lambdas[j] * lgm + 1.0;
                    let b = raw_scales[j];
                    lp += normal_logdensity(b, 1.0);
                    grad[sr.start + j] = g_s[j] * tau * lambdas[j] - b;
                }
                let (tv, tg) = half_distribution_logdensity_grad(
                    HalfKind::Cauchy,
                    model.hyper.half_cauchy_scale_global,
                    None,
                    tau,
                )?;
                lp += tv + log_global;
                grad[*lg] = g_log_tau + tau * tg + 1.0;

                for row in 0..c {
                    for j in 0..rank {
                        let u = left[(row, j)];
                        lp += normal_logdensity(u, 1.0);
                        grad[ur.start + row * rank + j] = gu_part[(row, j)] * scales[j] - u;
                    }
                }

                let si = checked_exp(*log_innovation, "scale hyperprior")?;
                let grwp = GrwParams {
                    intercept_scale: 1.0,
                    innovation_scale: si,
                };
                let mut g_si = 0.0;
                let mut rowbuf = vec![0.0; k];
                for j in 0..rank {
                    for col in 0..k {
                        rowbuf[col] = right_t[(j, col)];
                    }
                    let (v, grow, gsi) = grw_logdensity_grad(&rowbuf, &grwp)?;
                    lp += v;
                    g_si += gsi;
                    for col in 0..k {
                        grad[vr.start + j * k + col] = gv_part[(j, col)] * scales[j] + grow[col];
                    }
                }
                let (hv, hg) = half_distribution_logdensity_grad(
                    HalfKind::Normal,
                    model.innovation_scale_prior,
                    None,
                    si,
                )?;
                lp += hv + log_innovation;
                grad[*li] = si * (g_si + hg) + 1.0;
            }
            _ => unreachable!("layout and state built from the same context"),
        }

        if !lp.is_finite() {
            let context = match entry.prior {
                PriorKind::Gaussian => "weight prior",
                PriorKind::GroupHorseshoe | PriorKind::GroupHorseshoeGrw => "channel prior",
                PriorKind::EegDugh => "matrix-normal prior",
                PriorKind::EegLowRank => "factor prior",
            };
            return Err(Error::NonFinite {
                context,
                step: None,
            });
        }
    }

    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient",
            step: None,
        });
    }
    Ok((lp, grad))
}

/// Worst relative disagreement between the analytic gradient and a central
/// finite difference, coordinate-wise, with `h` scaled by coordinate size.
pub fn gradient_fd_relative_error(ctx: &PosteriorContext, flat: &DVector<f64>) -> Result<f64> {
    let (_, grad) = log_posterior_with_grad(ctx, flat)?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut x = flat.clone();
    for i in 0..flat.len() {
        let h = 1e-5 * (1.0 + flat[i].abs());
        x[i] = flat[i] + h;
        let up = log_posterior(ctx, &x)?;
        x[i] = flat[i] - h;
        let dn = log_posterior(ctx, &x)?;
        x[i] = flat[i];
        let fd = (up - dn) / (2.0 * h);
        num += (grad[i] - fd) * (grad[i] - fd);
        den += fd * fd;
    }
    Ok((num / den.max(1e-300)).sqrt())
}
