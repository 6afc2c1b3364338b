use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SceneDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Sequence-level k-fold partition. Frames never cross folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldPartition {
    pub k: usize,
    pub folds: Vec<Vec<u32>>,
}

/// Assigns sequences to `k` folds.
///
/// Sequences are shuffled per seed and dealt round-robin. In stratified mode
/// each class is dealt in turn, continuing from the fold where the previous
/// class stopped, so per-class counts differ by at most one across folds and
/// a class with fewer than `k` sequences lands in distinct folds.
pub fn kfold_partition(
    dataset: &SceneDataset,
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<FoldPartition> {
    let n = dataset.sequences().len();
    if k < 2 || k > n {
        return Err(Error::invalid(format!("k = {k} must be in [2, {n}]")));
    }
    let mut rng = seed::rng(seed, "kfold");
    let groups: Vec<Vec<u32>> = if stratified {
        (0..dataset.classes().len())
            .map(|c| {
                dataset
                    .sequences()
                    .iter()
                    .filter(|s| s.label() == c)
                    .map(|s| s.id())
                    .collect()
            })
            .collect()
    } else {
        vec![dataset.sequence_ids()]
    };
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut ids in groups {
        ids.shuffle(&mut rng);
        for id in ids {
            folds[next].push(id);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPartition { k, folds })
}

impl FoldPartition {
    /// Checks disjointness, exhaustiveness over `dataset` and non-empty folds.
    pub fn validate(&self, dataset: &SceneDataset) -> Result<()> {
        if self.folds.len() != self.k || self.k < 2 {
            return Err(Error::invalid(format!(
                "partition declares k = {} but has {} folds",
                self.k,
                self.folds.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for (i, f) in self.folds.iter().enumerate() {
            if f.is_empty() {
                return Err(Error::invalid(format!("fold {i} is empty")));
            }
            for &id in f {
                if !seen.insert(id) {
                    return Err(Error::invalid(format!(
                        "sequence {id} appears in two folds"
                    )));
                }
            }
        }
        let all: BTreeSet<u32> = dataset.sequence_ids().into_iter().collect();
        if seen != all {
            return Err(Error::invalid(
                "partition does not cover the dataset exactly",
            ));
        }
        Ok(())
    }

    /// `(train ids, test ids)` for holding out `fold`.
    pub fn split(&self, fold: usize) -> Result<(Vec<u32>, Vec<u32>)> {
        let test = self
            .folds
            .get(fold)
            .ok_or_else(|| Error::invalid(format!("fold {fold} out of range for k = {}", self.k)))?
            .clone();
        let mut train: Vec<u32> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train.sort_unstable();
        Ok((train, test))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
