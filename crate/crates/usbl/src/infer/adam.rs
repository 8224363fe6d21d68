//! Adam with global-norm gradient clipping and an exponentially decayed
//! learning rate, run for a fixed step budget.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub steps: usize,
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for OptimizerSchedule {
    fn default() -> Self {
        OptimizerSchedule {
            lr_start: 0.01,
            lr_end: 0.0025,
            steps: 5000,
            grad_clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl OptimizerSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.lr_end > self.lr_start || !(self.lr_end > 0.0) {
            return Err(Error::InvalidConfig(
                "learning rate must decay: 0 < lr_end <= lr_start".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::InvalidConfig("grad_clip_norm must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `lr_start * (lr_end / lr_start)^(step / steps)`.
pub fn lr_at(step: usize, schedule: &OptimizerSchedule) -> f64 {
    let frac = step as f64 / schedule.steps as f64;
    schedule.lr_start * (schedule.lr_end / schedule.lr_start).powf(frac)
}

/// Scales `g` so its Euclidean norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(g: &mut DVector<f64>, max_norm: f64) -> f64 {
    let norm = g.norm();
    if norm > max_norm {
        *g *= max_norm / norm;
    }
    norm
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: DVector<f64>,
    /// Objective value before each update.
    pub objective_trace: Vec<f64>,
}

/// Minimizes `objective` for exactly `schedule.steps` Adam updates.
pub fn fit_map<F>(
    mut objective: F,
    init: &DVector<f64>,
    schedule: &OptimizerSchedule,
) -> Result<FitResult>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    schedule.validate()?;
    let n = init.len();
    let mut x = init.clone();
    let mut m: DVector<f64> = DVector::zeros(n);
    let mut v: DVector<f64> = DVector::zeros(n);
    let mut trace = Vec::with_capacity(schedule.steps);
    for step in 0..schedule.steps {
        let (value, mut grad) = objective(&x).map_err(|e| attach_step(e, step))?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "objective",
                step: Some(step),
            });
        }
        trace.push(value);
        clip_global_norm(&mut grad, schedule.grad_clip_norm);
        let t = (step + 1) as i32;
        let lr = lr_at(step, schedule);
        let bc1 = 1.0 - schedule.beta1.powi(t);
        let bc2 = 1.0 - schedule.beta2.powi(t);
        for i in 0..n {
            m[i] = schedule.beta1 * m[i] + (1.0 - schedule.beta1) * grad[i];
            v[i] = schedule.beta2 * v[i] + (1.0 - schedule.beta2) * grad[i] * grad[i];
            let m_hat: f64 = m[i] / bc1;
            let v_hat: f64 = v[i] / bc2;
            x[i] -= lr * m_hat / (v_hat.sqrt() + schedule.epsilon);
        }
        if x.iter().any(|xi| !xi.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameters",
                step: Some(step),
            });
        }
    }
    Ok(FitResult {
        params: x,
        objective_trace: trace,
    })
}

fn attach_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite {
            context,
            step: None,
        } => Error::NonFinite {
            context,
            step: Some(step),
        },
        other => other,
    }
}
