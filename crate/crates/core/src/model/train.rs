use serde::{Deserialize, Serialize};

use super::network::{ComposedNetwork, LabeledBatch, Provenance};
use crate::dataset::FrameView;
use crate::error::{Error, Result};
use crate::numerics::{sgd_step, OptimizerState};
use crate::sampling::{inverse_frequency_weights, BatchStream};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    Plain,
    /// Inverse-frequency class weights from the frame counts of the training data.
    Weighted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMode {
    SequentialShuffle,
    ClassBalanced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub loss: LossMode,
    pub sampler: SamplerMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            loss: LossMode::Plain,
            sampler: SamplerMode::SequentialShuffle,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Mini-batch SGD over every parameter of `f` and `g`; nothing is frozen.
///
/// Returns the trained network and the mean batch loss of each epoch. Under
/// the class-balanced sampler an epoch is `⌈frames / batch_size⌉` batches.
///
/// A learning rate of exactly 0 is accepted here (parameters stay put) even
/// though [`TrainConfig::validate`] rejects it for configured stages.
pub fn train(
    mut net: ComposedNetwork,
    data: &FrameView<'_>,
    config: &TrainConfig,
) -> Result<(ComposedNetwork, Vec<f64>)> {
    if config.epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if net.class_names() != data.dataset().classes() {
        return Err(Error::ClassMismatch {
            expected: net.class_names().to_vec(),
            found: data.dataset().classes().to_vec(),
        });
    }
    let class_weights = match config.loss {
        LossMode::Plain => None,
        LossMode::Weighted => Some(inverse_frequency_weights(&data.class_counts())?.to_tensor()),
    };
    let shapes: Vec<Vec<usize>> = net
        .parameters()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
    let mut state = OptimizerState::new(config.learning_rate, config.momentum, &shape_refs)?;
    let batches_per_epoch = data.len().div_ceil(config.batch_size);

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let epoch_seed = seed::derive_seed(config.seed, &format!("epoch/{epoch}"));
        let stream = match config.sampler {
            SamplerMode::SequentialShuffle => {
                BatchStream::shuffled(data.len(), config.batch_size, epoch_seed)?
            }
            SamplerMode::ClassBalanced => BatchStream::balanced(
                data.labels(),
                data.num_classes(),
                config.batch_size,
                epoch_seed,
            )?,
        };
        let mut total = 0.0;
        for indices in stream.take(batches_per_epoch) {
            let (images, labels) = data.gather(&indices)?;
            let batch = LabeledBatch {
                images,
                labels,
                class_weights: class_weights.clone(),
            };
            let (loss, grads) = net.loss_and_gradients(&batch)?;
            sgd_step(&mut net.parameters_mut(), &grads, &mut state)?;
            total += loss;
        }
        history.push(total / batches_per_epoch as f64);
    }
    net.provenance = Provenance {
        stage: format!("{}+train", net.provenance.stage),
        seed: net.provenance.seed,
    };
    Ok((net, history))
}
