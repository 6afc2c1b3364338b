//! Deterministic dense arithmetic and the differentiable primitives the
//! backbone is assembled from.
//!
//! Everything here is 64-bit and single-threaded with a fixed summation
//! order, so identical inputs always produce bit-identical outputs.

mod gradcheck;
pub(crate) mod layers;
mod loss;
mod optim;
mod tensor;

pub use gradcheck::{gradient_check, relative_error, Differentiable};
pub use layers::{
    affine, avg_pool, conv2d, relu, AffineBackward, AvgPoolBackward, Conv2dBackward,
    LayerGradients, ReluBackward,
};
pub use loss::{softmax, softmax_cross_entropy, weighted_softmax_cross_entropy};
pub use optim::{sgd_step, OptimizerState};
pub use tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
