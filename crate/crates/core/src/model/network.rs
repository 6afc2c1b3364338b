use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numerics::layers as ops;
use crate::numerics::{
    softmax_cross_entropy, weighted_softmax_cross_entropy, Differentiable, Tensor,
};
use crate::seed;

/// Shape of the desk-scale backbone.
///
/// The extractor is `[conv → relu] → [avg-pool] → (affine → relu)* → affine → relu`,
/// where the bracketed stages are optional. Its output width is `feature_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub height: usize,
    pub width: usize,
    /// Output channels of the convolution stage; 0 disables it.
    pub conv_channels: usize,
    pub conv_kernel: usize,
    /// Average-pooling factor; 1 disables it.
    pub pool: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            conv_channels: 0,
            conv_kernel: 3,
            pool: 2,
            hidden: vec![64],
            feature_dim: 32,
        }
    }
}

impl ArchConfig {
    pub const CHANNELS: usize = 3;

    /// Flattened width entering the first affine layer, after validating
    /// that every stage chains.
    pub(crate) fn flat_input(&self) -> Result<usize> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if let Some(i) = self.hidden.iter().position(|&h| h == 0) {
            return Err(Error::invalid(format!("hidden layer {i} has width 0")));
        }
        let (mut h, mut w, mut c) = (self.height, self.width, Self::CHANNELS);
        if self.conv_channels > 0 {
            let k = self.conv_kernel;
            if k == 0 || k > h || k > w {
                return Err(Error::invalid(format!(
                    "conv kernel {k} does not fit {h}x{w}"
                )));
            }
            h = h - k + 1;
            w = w - k + 1;
            c = self.conv_channels;
        }
        if self.pool == 0 {
            return Err(Error::invalid("pool factor must be at least 1"));
        }
        if self.pool > 1 {
            if h % self.pool != 0 || w % self.pool != 0 {
                return Err(Error::invalid(format!(
                    "pool factor {} does not divide {h}x{w}",
                    self.pool
                )));
            }
            h /= self.pool;
            w /= self.pool;
        }
        Ok(h * w * c)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.height, self.width, Self::CHANNELS]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        kernel: Tensor,
        bias: Tensor,
    },
    Relu,
    AvgPool {
        size: usize,
    },
    /// Flattens any trailing axes of its input.
    Affine {
        weight: Tensor,
        bias: Tensor,
    },
}

enum Cache {
    Conv {
        input_shape: Vec<usize>,
        patches: Tensor,
    },
    Relu {
        output: Tensor,
    },
    AvgPool {
        input_shape: Vec<usize>,
    },
    Affine {
        input: Tensor,
        input_shape: Vec<usize>,
    },
}

fn flatten(x: &Tensor) -> Result<Tensor> {
    let rows = x.rows();
    let w = x.row_len();
    x.clone().reshape(&[rows, w])
}

impl Layer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv { kernel, bias } => Ok(ops::conv2d_forward(x, kernel, bias)?.0),
            Layer::Relu => Ok(ops::relu_forward(x)),
            Layer::AvgPool { size } => ops::avg_pool_forward(x, *size),
            Layer::Affine { weight, bias } => ops::affine_forward(&flatten(x)?, weight, bias),
        }
    }

    fn forward_cached(&self, x: Tensor) -> Result<(Tensor, Cache)> {
        Ok(match self {
            Layer::Conv { kernel, bias } => {
                let (out, patches) = ops::conv2d_forward(&x, kernel, bias)?;
                (
                    out,
                    Cache::Conv {
                        input_shape: x.shape().to_vec(),
                        patches,
                    },
                )
            }
            Layer::Relu => {
                let out = ops::relu_forward(&x);
                (out.clone(), Cache::Relu { output: out })
            }
            Layer::AvgPool { size } => (
                ops::avg_pool_forward(&x, *size)?,
                Cache::AvgPool {
                    input_shape: x.shape().to_vec(),
                },
            ),
            Layer::Affine { weight, bias } => {
                let input_shape = x.shape().to_vec();
                let input = flatten(&x)?;
                (
                    ops::affine_forward(&input, weight, bias)?,
                    Cache::Affine { input, input_shape },
                )
            }
        })
    }

    /// Pushes parameter gradients (in declaration order) onto `grads` and
    /// returns the input gradient when `need_input` is set.
    fn backward(
        &self,
        cache: Cache,
        upstream: Tensor,
        need_input: bool,
        grads: &mut Vec<Tensor>,
    ) -> Result<Option<Tensor>> {
        match (self, cache) {
            (
                Layer::Conv { kernel, .. },
                Cache::Conv {
                    input_shape,
                    patches,
                },
            ) => {
                let (d_in, d_k, d_b) =
                    ops::conv2d_backward(&input_shape, &patches, kernel, &upstream)?;
                grads.push(d_b);
                grads.push(d_k);
                Ok(need_input.then_some(d_in))
            }
            (Layer::Relu, Cache::Relu { output }) => {
                Ok(Some(ops::relu_backward(&output, &upstream)?))
            }
            (Layer::AvgPool { size }, Cache::AvgPool { input_shape }) => Ok(Some(
                ops::avg_pool_backward(&input_shape, *size, &upstream)?,
            )),
            (Layer::Affine { weight, .. }, Cache::Affine { input, input_shape }) => {
                let (d_in, d_w, d_b) = ops::affine_backward(&input, weight, &upstream)?;
                grads.push(d_b);
                grads.push(d_w);
                if need_input {
                    Ok(Some(d_in.reshape(&input_shape)?))
                } else {
                    Ok(None)
                }
            }
            _ => Err(Error::invalid("layer cache does not match layer")),
        }
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Conv { kernel, bias } => vec![("kernel", kernel), ("bias", bias)],
            Layer::Affine { weight, bias } => vec![("weight", weight), ("bias", bias)],
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv { kernel, bias } => vec![kernel, bias],
            Layer::Affine { weight, bias } => vec![weight, bias],
            _ => vec![],
        }
    }
}

/// He-style scaled uniform: `U(-√(6/fan_in), √(6/fan_in))`.
fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite init")
}

/// `f`: image batch `[B, H, W, 3]` to features `[B, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub arch: ArchConfig,
    pub layers: Vec<Layer>,
}

impl FeatureExtractor {
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let mut d = arch.flat_input()?;
        let mut rng = seed::rng(seed, "extractor");
        let mut layers = Vec::new();
        if arch.conv_channels > 0 {
            let k = arch.conv_kernel;
            let fan_in = k * k * ArchConfig::CHANNELS;
            layers.push(Layer::Conv {
                kernel: he_uniform(
                    &[k, k, ArchConfig::CHANNELS, arch.conv_channels],
                    fan_in,
                    &mut rng,
                ),
                bias: Tensor::zeros(&[arch.conv_channels]),
            });
            layers.push(Layer::Relu);
        }
        if arch.pool > 1 {
            layers.push(Layer::AvgPool { size: arch.pool });
        }
        for &width in arch.hidden.iter().chain(std::iter::once(&arch.feature_dim)) {
            layers.push(Layer::Affine {
                weight: he_uniform(&[d, width], d, &mut rng),
                bias: Tensor::zeros(&[width]),
            });
            layers.push(Layer::Relu);
            d = width;
        }
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.feature_dim
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let expected = self.arch.input_shape();
        if batch.shape().len() != 4 || batch.shape()[1..] != expected {
            return Err(Error::Shape {
                op: "extract_features",
                left: [&[0usize][..], &expected].concat(),
                right: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(name, t)| (format!("extractor.{i}.{name}"), t))
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }
}

/// `g`: a single affine layer from features to class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureClassifier {
    pub weight: Tensor,
    pub bias: Tensor,
    pub class_names: Vec<String>,
}

impl FeatureClassifier {
    pub fn new(feature_dim: usize, class_names: &[String], seed: u64) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Empty("class list"));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = class_names.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(Error::invalid(format!("duplicate class name `{dup}`")));
        }
        let mut rng = seed::rng(seed, "classifier");
        Ok(Self {
            weight: he_uniform(&[feature_dim, class_names.len()], feature_dim, &mut rng),
            bias: Tensor::zeros(&[class_names.len()]),
            class_names: class_names.to_vec(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        ops::affine_forward(features, &self.weight, &self.bias)
    }
}

/// Which stage produced a network, and the seed it was initialized from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub stage: String,
    pub seed: u64,
}

/// `g ∘ f`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedNetwork {
    pub extractor: FeatureExtractor,
    pub classifier: FeatureClassifier,
    pub provenance: Provenance,
}

/// One training batch: images `[B, H, W, 3]`, labels and optional class weights.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_weights: Option<Tensor>,
}

pub fn build_network(
    arch: &ArchConfig,
    class_names: &[String],
    seed: u64,
) -> Result<ComposedNetwork> {
    let extractor = FeatureExtractor::new(arch, seed)?;
    let classifier = FeatureClassifier::new(arch.feature_dim, class_names, seed)?;
    Ok(ComposedNetwork {
        extractor,
        classifier,
        provenance: Provenance {
            stage: "init".into(),
            seed,
        },
    })
}

pub fn extract_features(net: &ComposedNetwork, batch: &Tensor) -> Result<Tensor> {
    net.extractor.forward(batch)
}

pub fn classify(net: &ComposedNetwork, batch: &Tensor) -> Result<Tensor> {
    net.classify(batch)
}

/// Uniform `[0, 1)` images with uniformly drawn labels, for gradient checks
/// and benchmarks.
pub fn random_batch(
    arch: &ArchConfig,
    n_classes: usize,
    batch_size: usize,
    seed: u64,
) -> Result<LabeledBatch> {
    if n_classes == 0 || batch_size == 0 {
        return Err(Error::Empty("random batch"));
    }
    let mut rng = seed::rng(seed, "random-batch");
    let [h, w, c] = arch.input_shape();
    let images = (0..batch_size * h * w * c)
        .map(|_| rng.random::<f64>())
        .collect();
    Ok(LabeledBatch {
        images: Tensor::new(vec![batch_size, h, w, c], images)?,
        labels: (0..batch_size)
            .map(|_| rng.random_range(0..n_classes))
            .collect(),
        class_weights: None,
    })
}

/// Keeps the extractor and swaps in a freshly seeded classifier for
/// `new_class_names`. The swap happens even if the class list is unchanged.
pub fn drop_classifier(
    net: ComposedNetwork,
    new_class_names: &[String],
    seed: u64,
) -> Result<ComposedNetwork> {
    let classifier = FeatureClassifier::new(net.extractor.feature_dim(), new_class_names, seed)?;
    Ok(ComposedNetwork {
        extractor: net.extractor,
        classifier,
        provenance: Provenance {
            stage: format!("{}+drop", net.provenance.stage),
            seed,
        },
    })
}

/// Restores extractor and classifier from `checkpoint` untouched, provided
/// its class list equals `target_classes` in names and order.
pub fn maintain_classifier(
    checkpoint: &Checkpoint,
    target_classes: &[String],
) -> Result<ComposedNetwork> {
    if checkpoint.class_names != target_classes {
        return Err(Error::ClassMismatch {
            expected: target_classes.to_vec(),
            found: checkpoint.class_names.clone(),
        });
    }
    checkpoint.to_network()
}

impl ComposedNetwork {
    pub fn class_names(&self) -> &[String] {
        &self.classifier.class_names
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.extractor.arch
    }

    pub fn extract_features(&self, batch: &Tensor) -> Result<Tensor> {
        self.extractor.forward(batch)
    }

    pub fn classify(&self, batch: &Tensor) -> Result<Tensor> {
        self.classifier.forward(&self.extractor.forward(batch)?)
    }

    /// Top-1 class per image.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.classify(batch)?.argmax_rows())
    }

    /// Named parameters in declaration order: extractor layers, then the classifier.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut p = self.extractor.parameters();
        p.push(("classifier.weight".into(), &self.classifier.weight));
        p.push(("classifier.bias".into(), &self.classifier.bias));
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.extractor.parameters_mut();
        p.push(&mut self.classifier.weight);
        p.push(&mut self.classifier.bias);
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_labels(&self, batch: &LabeledBatch) -> Result<()> {
        if batch.images.rows() != batch.labels.len() {
            return Err(Error::Shape {
                op: "training batch",
                left: batch.images.shape().to_vec(),
                right: vec![batch.labels.len()],
            });
        }
        Ok(())
    }

    fn loss_of_logits(logits: &Tensor, batch: &LabeledBatch) -> Result<(f64, Tensor)> {
        match &batch.class_weights {
            Some(w) => weighted_softmax_cross_entropy(logits, &batch.labels, w),
            None => softmax_cross_entropy(logits, &batch.labels),
        }
    }

    pub fn loss(&self, batch: &LabeledBatch) -> Result<f64> {
        self.check_labels(batch)?;
        Ok(Self::loss_of_logits(&self.classify(&batch.images)?, batch)?.0)
    }

    /// Training loss and gradients for every parameter, ordered as
    /// [`ComposedNetwork::parameters`].
    pub fn loss_and_gradients(&self, batch: &LabeledBatch) -> Result<(f64, Vec<Tensor>)> {
        self.check_labels(batch)?;
        self.extractor.check_input(&batch.images)?;
        let mut caches = Vec::with_capacity(self.extractor.layers.len());
        let mut x = batch.images.clone();
        for layer in &self.extractor.layers {
            let (out, cache) = layer.forward_cached(x)?;
            caches.push(cache);
            x = out;
        }
        let features = x;
        let logits = self.classifier.forward(&features)?;
        let (loss, d_logits) = Self::loss_of_logits(&logits, batch)?;

        // Gradients are collected back to front and reversed at the end.
        let (d_feat, d_w, d_b) =
            ops::affine_backward(&features, &self.classifier.weight, &d_logits)?;
        let mut grads = vec![d_b, d_w];
        let mut upstream = d_feat;
        let first_param_layer = self
            .extractor
            .layers
            .iter()
            .position(|l| !l.params().is_empty())
            .unwrap_or(0);
        for (i, (layer, cache)) in self.extractor.layers.iter().zip(caches).enumerate().rev() {
            if i < first_param_layer {
                break;
            }
            match layer.backward(cache, upstream, i > first_param_layer, &mut grads)? {
                Some(g) => upstream = g,
                None => break,
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }
}

impl Differentiable for ComposedNetwork {
    type Batch = LabeledBatch;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        ComposedNetwork::parameters_mut(self)
    }

    fn loss(&self, batch: &LabeledBatch) -> Result<f64> {
        ComposedNetwork::loss(self, batch)
    }

    fn loss_and_gradients(&self, batch: &LabeledBatch) -> Result<(f64, Vec<Tensor>)> {
        ComposedNetwork::loss_and_gradients(self, batch)
    }
}
