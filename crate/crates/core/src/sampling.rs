//! Imbalance countermeasures: inverse-frequency class weights for the loss
//! and a class-balanced resampling batch stream.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::seed;

/// Per-class loss weights, aligned with the class list, with mean 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
    /// Factor that took the relative weights to mean 1.
    normalization: f64,
}

impl ClassWeights {
    /// Rescales positive raw weights to mean 1. The largest raw weight is
    /// divided out first, so equal raw weights normalize to exactly 1.0.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("class weights"));
        }
        if let Some(w) = raw.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::invalid(format!(
                "raw class weight {w} is not positive"
            )));
        }
        let max = raw.iter().copied().fold(0.0, f64::max);
        Self::from_relative(raw.iter().map(|w| w / max).collect())
    }

    fn from_relative(relative: Vec<f64>) -> Result<Self> {
        let n = relative.len() as f64;
        let normalization = n / relative.iter().sum::<f64>();
        Ok(Self {
            weights: relative.iter().map(|r| r * normalization).collect(),
            normalization,
        })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            normalization: 1.0,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.weights.clone()).expect("finite weights")
    }
}

/// `w_i ∝ 1 / n_i`, rescaled so the weights sum to the number of classes.
///
/// Relative weights are formed as `n_min / n_i`, which makes the result
/// invariant (bit-for-bit) under scaling all counts by a common factor.
pub fn inverse_frequency_weights(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(Error::Empty("class counts"));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(format!("#{i}")));
    }
    let min = *counts.iter().min().unwrap() as f64;
    ClassWeights::from_relative(counts.iter().map(|&c| min / c as f64).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamMode {
    Shuffled,
    Balanced,
}

/// Seeded stream of index batches over a labeled sample space.
///
/// In shuffled mode one pass over a permutation is emitted, the last batch
/// possibly short. In balanced mode every slot draws a class uniformly and
/// then a member of that class uniformly, with replacement, forever.
#[derive(Clone, Debug)]
pub struct BatchStream {
    rng: rand_chacha::ChaCha8Rng,
    batch_size: usize,
    mode: StreamMode,
    members: Vec<Vec<usize>>,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchStream {
    pub fn shuffled(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("dataset"));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let mut rng = seed::rng(seed, "shuffle");
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            rng,
            batch_size,
            mode: StreamMode::Shuffled,
            members: Vec::new(),
            order,
            cursor: 0,
        })
    }

    /// `labels[i]` is the class of sample `i`; every class in `0..n_classes`
    /// needs at least one sample.
    pub fn balanced(
        labels: &[usize],
        n_classes: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let mut members = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            members
                .get_mut(l)
                .ok_or(Error::LabelOutOfRange {
                    label: l,
                    classes: n_classes,
                })?
                .push(i);
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClass(format!("#{c}")));
        }
        Ok(Self {
            rng: seed::rng(seed, "balanced"),
            batch_size,
            mode: StreamMode::Balanced,
            members,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn mode(&self) -> StreamMode {
        self.mode
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        match self.mode {
            StreamMode::Shuffled => {
                if self.cursor >= self.order.len() {
                    return None;
                }
                let end = (self.cursor + self.batch_size).min(self.order.len());
                let batch = self.order[self.cursor..end].to_vec();
                self.cursor = end;
                Some(batch)
            }
            StreamMode::Balanced => Some(
                (0..self.batch_size)
                    .map(|_| {
                        let class = &self.members[self.rng.random_range(0..self.members.len())];
                        class[self.rng.random_range(0..class.len())]
                    })
                    .collect(),
            ),
        }
    }
}

/// `n_batches` class-balanced batches.
pub fn balanced_batches(
    labels: &[usize],
    n_classes: usize,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    Ok(BatchStream::balanced(labels, n_classes, batch_size, seed)?
        .take(n_batches)
        .collect())
}

/// One shuffled pass over `0..n`, chunked into batches.
pub fn shuffled_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    Ok(BatchStream::shuffled(n, batch_size, seed)?.collect())
}
