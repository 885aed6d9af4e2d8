use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, Result};
use crate::session::Warning;

pub const N_FOLDS: usize = 5;

/// Fold index of every trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of_trial: Vec<usize>,
    pub n_folds: usize,
}

impl FoldAssignment {
    pub fn new(fold_of_trial: Vec<usize>, n_folds: usize) -> Result<Self> {
        if let Some(&bad) = fold_of_trial.iter().find(|&&f| f >= n_folds) {
            return Err(contract_err!("fold {} outside 0..{}", bad, n_folds));
        }
        Ok(Self { fold_of_trial, n_folds })
    }

    /// Trials held out in round `k`.
    pub fn test_indices(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of_trial.len()).filter(|&i| self.fold_of_trial[i] == k).collect()
    }

    /// Trials used for training in round `k`.
    pub fn train_indices(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of_trial.len()).filter(|&i| self.fold_of_trial[i] != k).collect()
    }
}

/// Stratified assignment: each class is shuffled under `seed` and dealt
/// round-robin, continuing the deal position across classes so fold sizes
/// stay balanced.
pub fn make_folds(labels: &[usize], n_folds: usize, seed: u64) -> Result<(FoldAssignment, Vec<Warning>)> {
    if n_folds < 2 {
        return Err(contract_err!("need at least 2 folds, got {}", n_folds));
    }
    if labels.len() < n_folds {
        return Err(contract_err!("{} trials cannot fill {} folds", labels.len(), n_folds));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of_trial = vec![0; labels.len()];
    let mut warnings = Vec::new();
    let mut cursor = 0;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < n_folds {
            warnings.push(Warning::new(
                "folds",
                format!("class {} has {} trials for {} folds", class, members.len(), n_folds),
            ));
        }
        members.shuffle(&mut rng);
        for i in members {
            fold_of_trial[i] = cursor % n_folds;
            cursor += 1;
        }
    }
    Ok((FoldAssignment { fold_of_trial, n_folds }, warnings))
}
