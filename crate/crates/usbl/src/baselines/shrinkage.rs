//! Ledoit-Wolf shrinkage toward a scaled identity.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Well-conditioned covariance estimate from `n x C` observation rows:
/// `(1 - lambda) S + lambda mu I` with `S` the sample covariance (divisor
/// `n`), `mu = trace(S)/C`, and the closed-form optimal `lambda` clipped to
/// [0, 1]. A zero-dispersion `S` shrinks fully to the target.
pub fn ledoit_wolf(samples: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    ledoit_wolf_with(samples, None)
}

/// Same estimator with the intensity forced, for shrinkage-free comparisons.
pub fn ledoit_wolf_with(
    samples: &DMatrix<f64>,
    forced_lambda: Option<f64>,
) -> Result<(DMatrix<f64>, f64)> {
    let (n, c) = samples.shape();
    if n < 2 {
        return Err(Error::DomainError(format!(
            "covariance shrinkage needs at least 2 samples, got {n}"
        )));
    }
    let mut centered = samples.clone();
    for j in 0..c {
        let mean = centered.column(j).sum() / n as f64;
        for i in 0..n {
            centered[(i, j)] -= mean;
        }
    }
    let s = centered.transpose() * &centered / n as f64;
    let mu = s.trace() / c as f64;

    let lambda = match forced_lambda {
        Some(l) => {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::InvalidConfig(format!(
                    "shrinkage intensity {l} outside [0, 1]"
                )));
            }
            l
        }
        None => {
            let mut d2 = 0.0;
            for i in 0..c {
                for j in 0..c {
                    let target = if i == j { mu } else { 0.0 };
                    d2 += (s[(i, j)] - target).powi(2);
                }
            }
            if d2 <= f64::EPSILON * mu.max(1.0) {
                1.0
            } else {
                let mut b2_sum = 0.0;
                for k in 0..n {
                    let x = centered.row(k);
                    for i in 0..c {
                        for j in 0..c {
                            b2_sum += (x[i] * x[j] - s[(i, j)]).powi(2);
                        }
                    }
                }
                let b2_bar = b2_sum / (n * n) as f64;
                (b2_bar / d2).min(1.0)
            }
        }
    };

    let mut shrunk = s * (1.0 - lambda);
    for i in 0..c {
        shrunk[(i, i)] += lambda * mu;
    }
    Ok((shrunk, lambda))
}
