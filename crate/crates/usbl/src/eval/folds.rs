//! Repeated stratified participant-level fold assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CVConfig {
    pub k: usize,
    pub r: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Permit a plain shuffle when a class is smaller than k.
    pub allow_unstratified: bool,
}

impl Default for CVConfig {
    fn default() -> Self {
        CVConfig {
            k: 5,
            r: 10,
            seed: 0,
            stratified: true,
            allow_unstratified: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldSplit {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub splits: Vec<FoldSplit>,
    pub k: usize,
    pub r: usize,
    /// Design train/test sizes entering the variance correction.
    pub n1: f64,
    pub n2: f64,
}

const FOLD_STREAM: u64 = 0xF01D5;

/// Assigns each participant to exactly one test fold per repeat. Stratified
/// assignment deals each class round-robin after a seeded shuffle, so per-fold
/// class counts differ from the ideal proportion by at most one participant.
pub fn make_folds(labels_by_participant: &[(String, u8)], cfg: &CVConfig) -> Result<FoldAssignment> {
    if cfg.k < 2 || cfg.r < 1 {
        return Err(Error::InvalidEval("need k >= 2 and r >= 1".into()));
    }
    let n = labels_by_participant.len();
    if n < cfg.k {
        return Err(Error::StratificationFailure(format!(
            "{n} participants cannot fill {} folds",
            cfg.k
        )));
    }
    {
        let mut seen = std::collections::HashSet::new();
        for (id, _) in labels_by_participant {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidEval(format!("duplicate participant id {id}")));
            }
        }
    }
    let stratify = if cfg.stratified {
        let small_class = [0u8, 1].iter().any(|&c| {
            let count = labels_by_participant.iter().filter(|(_, y)| *y == c).count();
            count > 0 && count < cfg.k
        });
        if small_class && !cfg.allow_unstratified {
            return Err(Error::StratificationFailure(format!(
                "a label class has fewer than {} members",
                cfg.k
            )));
        }
        !small_class
    } else {
        false
    };

    let mut splits = Vec::with_capacity(cfg.r * cfg.k);
    for repeat in 0..cfg.r {
        let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, repeat as u64, FOLD_STREAM));
        let mut fold_of = vec![0usize; n];
        if stratify {
            for (class_idx, class) in [1u8, 0].iter().enumerate() {
                let mut members: Vec<usize> = (0..n)
                    .filter(|&i| labels_by_participant[i].1 == *class)
                    .collect();
                members.shuffle(&mut rng);
                let rot = (class_idx + repeat) % cfg.k;
                for (i, &m) in members.iter().enumerate() {
                    fold_of[m] = (i + rot) % cfg.k;
                }
            }
        } else {
            let mut members: Vec<usize> = (0..n).collect();
            members.shuffle(&mut rng);
            for (i, &m) in members.iter().enumerate() {
                fold_of[m] = i % cfg.k;
            }
        }
        for fold in 0..cfg.k {
            let test: Vec<String> = (0..n)
                .filter(|&i| fold_of[i] == fold)
                .map(|i| labels_by_participant[i].0.clone())
                .collect();
            let train: Vec<String> = (0..n)
                .filter(|&i| fold_of[i] != fold)
                .map(|i| labels_by_participant[i].0.clone())
                .collect();
            splits.push(FoldSplit {
                repeat,
                fold,
                train,
                test,
            });
        }
    }
    let n2 = n as f64 / cfg.k as f64;
    Ok(FoldAssignment {
        splits,
        k: cfg.k,
        r: cfg.r,
        n1: n as f64 - n2,
        n2,
    })
}
