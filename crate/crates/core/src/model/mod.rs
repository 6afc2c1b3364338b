//! Feature extractor `f`, feature classifier `g` and their composition
//! `g ∘ f`, plus the transfers between training stages:
//!
//! - [`drop_classifier`] keeps `f` and replaces `g` with a freshly seeded
//!   layer sized for a new class list.
//! - [`maintain_classifier`] restores both `f` and `g` from a checkpoint and
//!   refuses unless the class lists match by name and order.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::Checkpoint;
pub use network::{
    build_network, classify, drop_classifier, extract_features, maintain_classifier, random_batch,
    ArchConfig, ComposedNetwork, FeatureClassifier, FeatureExtractor, LabeledBatch, Layer,
};
pub use train::{train, LossMode, SamplerMode, TrainConfig};
