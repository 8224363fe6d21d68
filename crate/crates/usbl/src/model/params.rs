//! Parameter state and its flat-vector layout.
//!
//! Positive quantities are stored on the log scale so the optimizer sees an
//! unconstrained vector; accessors exponentiate. Pack/unpack copy raw values
//! verbatim, so the round trip is bit-exact.

use nalgebra::{DMatrix, DVector};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::model::config::{ModelContext, PriorKind};

#[derive(Debug, Clone, PartialEq)]
pub enum ModalityBlock {
    Gaussian {
        weights: DMatrix<f64>,
    },
    Horseshoe {
        log_global: f64,
        /// Per-channel local scale, log.
        log_local: DVector<f64>,
        raw: DMatrix<f64>,
        /// Random-walk innovation spread, log; `None` for the plain variant.
        log_innovation: Option<f64>,
    },
    Dugh {
        /// Activation contrast A (channels x samples).
        contrast: DMatrix<f64>,
        /// Per-region source scale, log.
        log_region_scales: DVector<f64>,
        log_innovation: f64,
    },
    LowRank {
        left: DMatrix<f64>,
        log_global: f64,
        /// Per-component local scale, log.
        log_local: DVector<f64>,
        raw_scales: DVector<f64>,
        /// Right factors, components x samples; rows follow the random walk.
        right_t: DMatrix<f64>,
        log_innovation: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub alphas: Vec<f64>,
    pub blocks: Vec<ModalityBlock>,
    /// Session-evidence scale; fixed at 1.0 during stage-1 fitting and never
    /// part of the packed vector.
    pub omega: f64,
}

impl ModelParameters {
    /// Singular scales of a low-rank block: `s_j = tau * lambda_j * b_j`.
    pub fn lowrank_scales(
        log_global: f64,
        log_local: &DVector<f64>,
        raw_scales: &DVector<f64>,
    ) -> DVector<f64> {
        let tau = log_global.exp();
        DVector::from_fn(raw_scales.len(), |j, _| {
            tau * log_local[j].exp() * raw_scales[j]
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockLayout {
    Gaussian {
        weights: Range<usize>,
    },
    Horseshoe {
        log_global: usize,
        log_local: Range<usize>,
        raw: Range<usize>,
        log_innovation: Option<usize>,
    },
    Dugh {
        contrast: Range<usize>,
        log_region_scales: Range<usize>,
        log_innovation: usize,
    },
    LowRank {
        left: Range<usize>,
        log_global: usize,
        log_local: Range<usize>,
        raw_scales: Range<usize>,
        right_t: Range<usize>,
        log_innovation: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityLayout {
    pub alpha: usize,
    pub block: BlockLayout,
    pub channels: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub modalities: Vec<ModalityLayout>,
    pub len: usize,
}

impl ParamLayout {
    pub fn for_context(ctx: &ModelContext) -> ParamLayout {
        let mut cursor = 0usize;
        let mut take = |n: usize| -> Range<usize> {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };
        let mut modalities = Vec::with_capacity(ctx.entries.len());
        for e in &ctx.entries {
            let alpha = take(1).start;
            let (c, k) = (e.channels, e.samples);
            let block = match e.prior {
                PriorKind::Gaussian => BlockLayout::Gaussian { weights: take(c * k) },
                PriorKind::GroupHorseshoe | PriorKind::GroupHorseshoeGrw => BlockLayout::Horseshoe {
                    log_global: take(1).start,
                    log_local: take(c),
                    raw: take(c * k),
                    log_innovation: if e.prior == PriorKind::GroupHorseshoeGrw {
                        Some(take(1).start)
                    } else {
                        None
                    },
                },
                PriorKind::EegDugh => BlockLayout::Dugh {
                    contrast: take(c * k),
                    log_region_scales: take(e.regions.expect("regions set for this prior")),
                    log_innovation: take(1).start,
                },
                PriorKind::EegLowRank => {
                    let r = e.rank.expect("rank set for this prior");
                    BlockLayout::LowRank {
                        left: take(c * r),
                        log_global: take(1).start,
                        log_local: take(r),
                        raw_scales: take(r),
                        right_t: take(r * k),
                        log_innovation: take(1).start,
                    }
                }
            };
            modalities.push(ModalityLayout {
                alpha,
                block,
                channels: c,
                samples: k,
            });
        }
        ParamLayout {
            modalities,
            len: cursor,
        }
    }

    pub fn unpack(&self, flat: &DVector<f64>) -> Result<ModelParameters> {
        if flat.len() != self.len {
            return Err(Error::DomainError(format!(
                "parameter vector has length {}, layout needs {}",
                flat.len(),
                self.len
            )));
        }
        let matrix = |r: &Range<usize>, rows: usize, cols: usize| {
            DMatrix::from_row_slice(rows, cols, &flat.as_slice()[r.clone()])
        };
        let vector = |r: &Range<usize>| DVector::from_column_slice(&flat.as_slice()[r.clone()]);
        let mut alphas = Vec::with_capacity(self.modalities.len());
        let mut blocks = Vec::with_capacity(self.modalities.len());
        for m in &self.modalities {
            alphas.push(flat[m.alpha]);
            let (c, k) = (m.channels, m.samples);
            blocks.push(match &m.block {
                BlockLayout::Gaussian { weights } => ModalityBlock::Gaussian {
                    weights: matrix(weights, c, k),
                },
                BlockLayout::Horseshoe {
                    log_global,
                    log_local,
                    raw,
                    log_innovation,
                } => ModalityBlock::Horseshoe {
                    log_global: flat[*log_global],
                    log_local: vector(log_local),
                    raw: matrix(raw, c, k),
                    log_innovation: log_innovation.map(|i| flat[i]),
                },
                BlockLayout::Dugh {
                    contrast,
                    log_region_scales,
                    log_innovation,
                } => ModalityBlock::Dugh {
                    contrast: matrix(contrast, c, k),
                    log_region_scales: vector(log_region_scales),
                    log_innovation: flat[*log_innovation],
                },
                BlockLayout::LowRank {
                    left,
                    log_global,
                    log_local,
                    raw_scales,
                    right_t,
                    log_innovation,
                } => {
                    let r = raw_scales.len();
                    ModalityBlock::LowRank {
                        left: matrix(left, c, r),
                        log_global: flat[*log_global],
                        log_local: vector(log_local),
                        raw_scales: vector(raw_scales),
                        right_t: matrix(right_t, r, k),
                        log_innovation: flat[*log_innovation],
                    }
                }
            });
        }
        Ok(ModelParameters {
            alphas,
            blocks,
            omega: 1.0,
        })
    }

    pub fn pack(&self, params: &ModelParameters) -> Result<DVector<f64>> {
        if params.alphas.len() != self.modalities.len()
            || params.blocks.len() != self.modalities.len()
        {
            return Err(Error::DomainError(format!(
                "parameter state has {} modalities, layout has {}",
                params.blocks.len(),
                self.modalities.len()
            )));
        }
        let mut flat = DVector::zeros(self.len);
        let put_matrix = |flat: &mut DVector<f64>, r: &Range<usize>, m: &DMatrix<f64>| {
            let dst = &mut flat.as_mut_slice()[r.clone()];
            let mut i = 0;
            for row in 0..m.nrows() {
                for col in 0..m.ncols() {
                    dst[i] = m[(row, col)];
                    i += 1;
                }
            }
        };
        for (mi, m) in self.modalities.iter().enumerate() {
            flat[m.alpha] = params.alphas[mi];
            match (&params.blocks[mi], &m.block) {
                (ModalityBlock::Gaussian { weights }, BlockLayout::Gaussian { weights: r }) => {
                    put_matrix(&mut flat, r, weights);
                }
                (
                    ModalityBlock::Horseshoe {
                        log_global,
                        log_local,
                        raw,
                        log_innovation,
                    },
                    BlockLayout::Horseshoe {
                        log_global: g,
                        log_local: l,
                        raw: rr,
                        log_innovation: li,
                    },
                ) => {
                    flat[*g] = *log_global;
                    flat.as_mut_slice()[l.clone()].copy_from_slice(log_local.as_slice());
                    put_matrix(&mut flat, rr, raw);
                    match (log_innovation, li) {
                        (Some(v), Some(i)) => flat[*i] = *v,
                        (None, None) => {}
                        _ => {
                            return Err(Error::DomainError(
                                "innovation slot mismatch between state and layout".into(),
                            ))
                        }
                    }
                }
                (
                    ModalityBlock::Dugh {
                        contrast,
                        log_region_scales,
                        log_innovation,
                    },
                    BlockLayout::Dugh {
                        contrast: a,
                        log_region_scales: g,
                        log_innovation: i,
                    },
                ) => {
                    put_matrix(&mut flat, a, contrast);
                    flat.as_mut_slice()[g.clone()].copy_from_slice(log_region_scales.as_slice());
                    flat[*i] = *log_innovation;
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
                        left: u,
                        log_global: g,
                        log_local: l,
                        raw_scales: s,
                        right_t: v,
                        log_innovation: i,
                    },
                ) => {
                    put_matrix(&mut flat, u, left);
                    flat[*g] = *log_global;
                    flat.as_mut_slice()[l.clone()].copy_from_slice(log_local.as_slice());
                    flat.as_mut_slice()[s.clone()].copy_from_slice(raw_scales.as_slice());
                    put_matrix(&mut flat, v, right_t);
                    flat[*i] = *log_innovation;
                }
                _ => {
                    return Err(Error::DomainError(
                        "parameter block kind does not match layout".into(),
                    ))
                }
            }
        }
        Ok(flat)
    }
}
