//! Shrinkage LDA on pooled within-class covariance.

use nalgebra::{DMatrix, DVector};


use crate::baselines::shrinkage::ledoit_wolf_with;
use crate::error::{Error, Result};
use crate::leadfield::cholesky_with_jitter;

#[derive(Debug, Clone)]
pub struct SLDAModel {
    pub weights: DVector<f64>,
    pub bias: f64,
    /// Ledoit-Wolf intensity actually used for the pooled covariance.
    pub shrinkage: f64,
}

pub fn fit_slda(features: &DMatrix<f64>, labels: &[u8]) -> Result<SLDAModel> {
    fit_slda_with_shrinkage(features, labels, None)
}

/// `w = Sigma^-1 (mu1 - mu0)`, bias centered between the class means; the
/// pooled covariance comes from class-centered residuals with Ledoit-Wolf
/// shrinkage unless an intensity is forced.
pub fn fit_slda_with_shrinkage(
    features: &DMatrix<f64>,
    labels: &[u8],
    forced_lambda: Option<f64>,
) -> Result<SLDAModel> {
    let (n, c) = features.shape();
    if labels.len() != n {
        return Err(Error::DomainError(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    let n1 = labels.iter().filter(|&&y| y == 1).count();
    if n1 == 0 || n1 == n {
        return Err(Error::DomainError(
            "discriminant fitting needs both classes".into(),
        ));
    }

    let mut mu = [DVector::zeros(c), DVector::zeros(c)];
    for (i, &y) in labels.iter().enumerate() {
        mu[y as usize] += features.row(i).transpose();
    }
    mu[0] /= (n - n1) as f64;
    mu[1] /= n1 as f64;

    let mut residuals = features.clone();
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..c {
            residuals[(i, j)] -= mu[y as usize][j];
        }
    }
    let (sigma, shrinkage) = ledoit_wolf_with(&residuals, forced_lambda)?;

    let delta = &mu[1] - &mu[0];
    let chol = cholesky_with_jitter(&sigma, "pooled class covariance")?;
    let weights = chol.solve(&delta);
    let bias = -0.5 * weights.dot(&(&mu[1] + &mu[0]));
    Ok(SLDAModel {
        weights,
        bias,
        shrinkage,
    })
}

/// Discriminant score; the class-1 probability is its logistic.
pub fn predict_slda(model: &SLDAModel, features: &DVector<f64>) -> f64 {
    model.weights.dot(features) + model.bias
}
