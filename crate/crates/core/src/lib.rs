//! Two-stage drop-then-maintain transfer learning for severely imbalanced,
//! sequence-labeled scene classification.
//!
//! The crate is split along the stages of the workflow:
//!
//! - [`numerics`]: dense tensors, differentiable layers, weighted
//!   cross-entropy, SGD with momentum and finite-difference gradient checks.
//! - [`model`]: the feature extractor / feature classifier split, the drop
//!   and maintain transfers, checkpoints and the training loop.
//! - [`taxonomy`]: source-to-target class filtering and merging.
//! - [`sampling`]: inverse-frequency class weights and class-balanced batches.
//! - [`dataset`]: sequence-labeled datasets, synthetic generators, the binary
//!   file format and sequence-atomic k-fold partitioning.
//! - [`evaluation`]: majority voting, sequence-level accuracy and macro metrics.
//! - [`pipeline`]: the strategy / mode / ablation experiment grid and reports.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod sampling;
pub mod taxonomy;

mod seed;

pub use dataset::{FoldPartition, GeneratorConfig, SceneDataset, Sequence};
pub use error::{Error, Result};
pub use evaluation::{ConfusionMatrix, EvaluationReport};
pub use model::{ArchConfig, Checkpoint, ComposedNetwork, LossMode, SamplerMode, TrainConfig};
pub use numerics::Tensor;
pub use pipeline::{ExperimentConfig, ExperimentResult, Mode, Strategy};
pub use sampling::ClassWeights;
pub use seed::derive_seed;
pub use taxonomy::ClassMergeMap;
