//! Stratified k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::Label;
use crate::error::{config_err, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldSplit {
    /// Ids in fold `f`, sorted.
    pub fn fold(&self, f: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &v)| v == f)
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Ids outside fold `f`, sorted.
    pub fn complement(&self, f: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &v)| v != f)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Shuffles each class independently, then deals ids round-robin over the folds,
/// continuing the dealer position across classes. Fold sizes differ by at most
/// one and every fold's class counts are within one of the global proportion.
pub fn kfold_split(items: &[(String, Label)], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return config_err(format!("fold count must be at least 2, got {k}"));
    }
    if items.len() < k {
        return config_err(format!("{} videos cannot fill {k} folds", items.len()));
    }
    let mut r = rng::stream(seed, rng::FOLDS, 0);
    let mut assignments = BTreeMap::new();
    let mut next = 0;
    for label in [Label::Benign, Label::Malignant] {
        let mut ids: Vec<&String> = items
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(id, _)| id)
            .collect();
        ids.sort();
        ids.shuffle(&mut r);
        for id in ids {
            if assignments.insert(id.clone(), next).is_some() {
                return config_err(format!("duplicate video id {id}"));
            }
            next = (next + 1) % k;
        }
    }
    Ok(FoldSplit { k, assignments })
}

/// Train/test ids of a single stratified split; sorted within each side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HoldoutSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Puts `round(train_fraction * n_class)` ids of each class into the training side.
pub fn holdout_split(
    items: &[(String, Label)],
    train_fraction: f64,
    seed: u64,
) -> Result<HoldoutSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return config_err(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        ));
    }
    let mut r = rng::stream(seed, rng::SPLIT, 0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for label in [Label::Benign, Label::Malignant] {
        let mut ids: Vec<&String> = items
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(id, _)| id)
            .collect();
        ids.sort();
        ids.shuffle(&mut r);
        let cut = (train_fraction * ids.len() as f64).round() as usize;
        train.extend(ids[..cut].iter().map(|s| (*s).clone()));
        test.extend(ids[cut..].iter().map(|s| (*s).clone()));
    }
    if train.is_empty() || test.is_empty() {
        return config_err(format!(
            "{} videos cannot be split at {train_fraction}",
            items.len()
        ));
    }
    train.sort();
    test.sort();
    Ok(HoldoutSplit { train, test })
}
