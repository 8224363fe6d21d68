//! The recoding trick: per-trial congruency labels and their inversion.

use crate::error::{Error, Result};
use crate::tensor_io::{Condition, Session};

/// Per-trial congruency labels: 1 iff the trial's pairing is the congruent
/// one for this participant's label, i.e. `y` on congruent-design trials and
/// `1 - y` on incongruent-design trials.
pub fn recode_labels(session: &Session) -> Result<Vec<u8>> {
    let y = session.label.ok_or(Error::LabelMissing {
        participant: session.participant_id.clone(),
    })?;
    Ok(session
        .conditions
        .iter()
        .map(|c| match c {
            Condition::Congruent => y,
            Condition::Incongruent => 1 - y,
        })
        .collect())
}

/// Maps per-trial congruency probabilities back to the probability that the
/// participant label is 1: identity on congruent-design trials, complement on
/// incongruent-design trials.
pub fn unrecode_predictions(p_congruent: &[f64], conditions: &[Condition]) -> Result<Vec<f64>> {
    if p_congruent.len() != conditions.len() {
        return Err(Error::DomainError(format!(
            "{} predictions for {} trial conditions",
            p_congruent.len(),
            conditions.len()
        )));
    }
    Ok(p_congruent
        .iter()
        .zip(conditions)
        .map(|(&p, c)| match c {
            Condition::Congruent => p,
            Condition::Incongruent => 1.0 - p,
        })
        .collect())
}
