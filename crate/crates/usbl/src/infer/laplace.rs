//! Diagonal Laplace approximation at the optimized mode.

use nalgebra::DVector;

use crate::error::Result;

pub const CURVATURE_FD_STEP_REL: f64 = 1e-4;
pub const CURVATURE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LaplaceDiag {
    pub precisions: Vec<f64>,
    /// True when any coordinate had non-positive or non-finite curvature
    /// before flooring.
    pub flagged: bool,
}

/// Central-difference diagonal curvature of `objective` (the negative log
/// posterior) at `mode`. Coordinates where the estimate is non-positive or
/// non-finite are floored and reported via `flagged`.
pub fn laplace_diag<F>(mut objective: F, mode: &DVector<f64>) -> Result<LaplaceDiag>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let f0 = objective(mode)?;
    let mut precisions = Vec::with_capacity(mode.len());
    let mut flagged = false;
    let mut x = mode.clone();
    for i in 0..mode.len() {
        let h = CURVATURE_FD_STEP_REL * (1.0 + mode[i].abs());
        x[i] = mode[i] + h;
        let fp = objective(&x)?;
        x[i] = mode[i] - h;
        let fm = objective(&x)?;
        x[i] = mode[i];
        let curv = (fp - 2.0 * f0 + fm) / (h * h);
        if curv.is_finite() && curv > CURVATURE_FLOOR {
            precisions.push(curv);
        } else {
            flagged = true;
            precisions.push(CURVATURE_FLOOR);
        }
    }
    Ok(LaplaceDiag { precisions, flagged })
}
