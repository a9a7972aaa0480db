//! Stratified k-fold partitioning of a labelled cohort.
//!
//! Samples are shuffled within each class and merged so every class is
//! spread evenly along the sequence. With that order, any contiguous
//! block is close to stratified: test blocks are consecutive slices, and
//! each fold's remainder is reshuffled and merged again before taking
//! validation then training ids.

use super::{Result, TrainConfig, TrainError};
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Positions into the cohort slice; the three lists are pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `ids` within each class with `rng`, then merges the classes so
/// that the j-th of n_c members of class c lands at relative position
/// (j + ½) / n_c. Ties go to the lower class.
fn stratified_order(ids: &[usize], labels: &[usize], n_classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for &i in ids {
        by_class[labels[i]].push(i);
    }
    let mut keyed = Vec::with_capacity(ids.len());
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(rng);
        let n = members.len();
        for (j, &id) in members.iter().enumerate() {
            // compare (2j+1)/2n exactly as cross-multiplied integers
            keyed.push(((2 * j + 1) as u128, (2 * n) as u128, c, id));
        }
    }
    keyed.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)).then(a.2.cmp(&b.2)));
    keyed.into_iter().map(|k| k.3).collect()
}

/// Size of each fold's test block. Rotating disjoint blocks need
/// `n_folds × n_test` samples; a smaller cohort shrinks the block to
/// `len / n_folds` with a warning.
pub fn test_block_size(len: usize, cfg: &TrainConfig) -> usize {
    if cfg.n_folds <= 1 {
        return cfg.n_test;
    }
    let fit = len / cfg.n_folds;
    if fit < cfg.n_test {
        warn!(
            "{} folds of {} test samples need {} samples, cohort has {}; using test blocks of {}",
            cfg.n_folds,
            cfg.n_test,
            cfg.n_folds * cfg.n_test,
            len,
            fit
        );
        fit
    } else {
        cfg.n_test
    }
}

/// Splits for every fold. `labels[i]` is the class of cohort position `i`.
pub fn make_splits(labels: &[usize], n_classes: usize, cfg: &TrainConfig) -> Result<Vec<FoldSplit>> {
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(TrainError::Config(format!("label {l} outside 0..{n_classes}")));
    }
    let len = labels.len();
    let block = test_block_size(len, cfg);
    if block == 0 || cfg.n_train == 0 || cfg.n_val == 0 {
        return Err(TrainError::Config(format!(
            "empty partition: cohort of {len} gives train {} / val {} / test {block}",
            cfg.n_train, cfg.n_val
        )));
    }
    if len < block + cfg.n_train + cfg.n_val {
        return Err(TrainError::Config(format!(
            "cohort of {len} samples is smaller than train {} + val {} + test {block}",
            cfg.n_train, cfg.n_val
        )));
    }
    let all: Vec<usize> = (0..len).collect();
    let order = stratified_order(&all, labels, n_classes, &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    (0..cfg.n_folds)
        .map(|fold| {
            let test = order[fold * block..(fold + 1) * block].to_vec();
            let rest: Vec<usize> = order[..fold * block]
                .iter()
                .chain(&order[(fold + 1) * block..])
                .copied()
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(cfg.seed, fold));
            let rest = stratified_order(&rest, labels, n_classes, &mut rng);
            Ok(FoldSplit {
                fold,
                val: rest[..cfg.n_val].to_vec(),
                train: rest[cfg.n_val..cfg.n_val + cfg.n_train].to_vec(),
                test,
            })
        })
        .collect()
}

/// Per-fold seed: the run seed offset by the fold index.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_add(fold as u64)
}
