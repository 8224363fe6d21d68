//! L2-regularized logistic regression with a nested-CV grid search.

use nalgebra::{DMatrix, DVector};


use crate::error::{Error, Result};
use crate::eval::folds::{make_folds, CVConfig};
use crate::infer::init::derive_seed;
use crate::leadfield::cholesky_with_jitter;

/// Inverse-regularization grid; the penalty is `|w|^2 / (2c)`, bias free.
pub const RIDGE_GRID: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

pub const RIDGE_NESTED_FOLDS: usize = 5;

const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;
const PROB_FLOOR: f64 = 1e-12;
const GRID_STREAM: u64 = 0x41D6E;

#[derive(Debug, Clone)]
pub struct RidgeLRModel {
    pub weights: DVector<f64>,
    pub bias: f64,
    /// Selected inverse regularization; always one of the grid values.
    pub c: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Newton iterations on the penalized log likelihood at a fixed `c`.
pub fn fit_ridge_lr_fixed(features: &DMatrix<f64>, labels: &[u8], c: f64) -> Result<RidgeLRModel> {
    let (n, d) = features.shape();
    if labels.len() != n {
        return Err(Error::DomainError(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "inverse regularization must be a positive finite number, got {c}"
        )));
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    if n1 == 0 || n1 == n {
        return Err(Error::DomainError(
            "logistic regression needs both classes".into(),
        ));
    }

    // Last column of the augmented design is the intercept.
    let mut theta: DVector<f64> = DVector::zeros(d + 1);
    for _ in 0..NEWTON_MAX_ITERS {
        let mut grad: DVector<f64> = DVector::zeros(d + 1);
        let mut hess: DMatrix<f64> = DMatrix::zeros(d + 1, d + 1);
        for i in 0..n {
            let row = features.row(i);
            let mut s = theta[d];
            for j in 0..d {
                s += row[j] * theta[j];
            }
            let p = sigmoid(s);
            let r = p - f64::from(labels[i]);
            let w = (p * (1.0 - p)).max(PROB_FLOOR);
            for j in 0..d {
                grad[j] += row[j] * r;
                for k in j..d {
                    hess[(j, k)] += w * row[j] * row[k];
                }
                hess[(j, d)] += w * row[j];
            }
            grad[d] += r;
            hess[(d, d)] += w;
        }
        for j in 0..d {
            grad[j] += theta[j] / c;
            hess[(j, j)] += 1.0 / c;
            for k in (j + 1)..=d {
                hess[(k, j)] = hess[(j, k)];
            }
        }

        if grad.amax() < NEWTON_GRAD_TOL {
            break;
        }
        let chol = cholesky_with_jitter(&hess, "logistic Newton system")?;
        let step = chol.solve(&grad);
        theta -= &step;
        if !theta.iter().all(|v| v.is_finite()) {
            return Err(Error::DomainError(
                "logistic regression diverged to non-finite weights".into(),
            ));
        }
        if step.amax() < 1e-12 {
            break;
        }
    }

    Ok(RidgeLRModel {
        weights: theta.rows(0, d).into_owned(),
        bias: theta[d],
        c,
    })
}

/// Picks the grid value with the best pooled held-out log likelihood over
/// stratified row folds, then refits on everything. Ties keep the earliest
/// grid entry.
pub fn fit_ridge_lr(
    features: &DMatrix<f64>,
    labels: &[u8],
    grid: &[f64],
    nested_folds: usize,
    seed: u64,
) -> Result<RidgeLRModel> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty regularization grid".into()));
    }
    if grid.len() == 1 {
        return fit_ridge_lr_fixed(features, labels, grid[0]);
    }
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::DomainError(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }

    let ids: Vec<(String, u8)> = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| (format!("r{i:05}"), y))
        .collect();
    let cfg = CVConfig {
        k: nested_folds,
        r: 1,
        seed: derive_seed(seed, GRID_STREAM, 0),
        stratified: true,
        allow_unstratified: false,
    };
    let assignment = make_folds(&ids, &cfg)?;

    let row_of = |id: &str| -> usize { id[1..].parse().expect("fold ids are row indices") };
    let mut best: Option<(f64, f64)> = None;
    for &c in grid {
        let mut loglik = 0.0;
        for split in &assignment.splits {
            let train_rows: Vec<usize> = split.train.iter().map(|id| row_of(id)).collect();
            let sub_x = features.select_rows(train_rows.iter());
            let sub_y: Vec<u8> = train_rows.iter().map(|&i| labels[i]).collect();
            let m = fit_ridge_lr_fixed(&sub_x, &sub_y, c)?;
            for id in &split.test {
                let i = row_of(id);
                let s = m.weights.dot(&features.row(i).transpose()) + m.bias;
                let p = sigmoid(s).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                loglik += if labels[i] == 1 { p.ln() } else { (1.0 - p).ln() };
            }
        }
        match best {
            Some((best_ll, _)) if loglik <= best_ll => {}
            _ => best = Some((loglik, c)),
        }
    }

    let (_, c) = best.expect("nonempty grid");
    fit_ridge_lr_fixed(features, labels, c)
}

/// Linear score; the class-1 probability is its logistic.
pub fn predict_ridge_lr(model: &RidgeLRModel, features: &DVector<f64>) -> f64 {
    model.weights.dot(features) + model.bias
}
