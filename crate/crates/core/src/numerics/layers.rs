use std::collections::BTreeMap;

use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::error::{Error, Result};

/// Gradients produced by one backward pass through a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    pub input: Tensor,
    pub params: BTreeMap<&'static str, Tensor>,
}

/// Saved forward state of [`affine`].
#[derive(Clone, Debug)]
pub struct AffineBackward {
    input: Tensor,
    weight: Tensor,
}

/// `input · weight + bias`, bias broadcast over rows.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(Tensor, AffineBackward)> {
    let out = affine_forward(input, weight, bias)?;
    Ok((
        out,
        AffineBackward {
            input: input.clone(),
            weight: weight.clone(),
        },
    ))
}

pub(crate) fn affine_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [_, d_out] = weight.dims2("affine")?;
    if bias.shape() != [d_out] {
        return Err(Error::Shape {
            op: "affine",
            left: weight.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let mut out = matmul(input, weight)?;
    for row in out.data_mut().chunks_mut(d_out) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    out.ensure_finite("affine")
}

/// Returns `(d_input, d_weight, d_bias)`.
pub(crate) fn affine_backward(
    input: &Tensor,
    weight: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [rows, d_out] = upstream.dims2("affine backward")?;
    let d_input = matmul_a_bt(upstream, weight)?;
    let d_weight = matmul_at_b(input, upstream)?;
    let mut d_bias = vec![0.0; d_out];
    for i in 0..rows {
        for (b, g) in d_bias.iter_mut().zip(upstream.row(i)) {
            *b += g;
        }
    }
    Ok((d_input, d_weight, Tensor::new(vec![d_out], d_bias)?))
}

impl AffineBackward {
    pub fn backward(&self, upstream: &Tensor) -> Result<LayerGradients> {
        let (input, weight, bias) = affine_backward(&self.input, &self.weight, upstream)?;
        Ok(LayerGradients {
            input,
            params: BTreeMap::from([("weight", weight), ("bias", bias)]),
        })
    }
}

/// Saved forward state of [`relu`]: which elements were strictly positive.
#[derive(Clone, Debug)]
pub struct ReluBackward {
    mask: Vec<bool>,
    shape: Vec<usize>,
}

pub fn relu(input: &Tensor) -> (Tensor, ReluBackward) {
    let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
    let out = relu_forward(input);
    (
        out,
        ReluBackward {
            mask,
            shape: input.shape().to_vec(),
        },
    )
}

pub(crate) fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Subgradient at exactly zero is zero.
pub(crate) fn relu_backward(activation: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    activation.same_shape(upstream, "relu backward")?;
    let mut g = upstream.clone();
    for (gv, &a) in g.data_mut().iter_mut().zip(activation.data()) {
        if a <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

impl ReluBackward {
    pub fn backward(&self, upstream: &Tensor) -> Result<LayerGradients> {
        if upstream.shape() != self.shape.as_slice() {
            return Err(Error::Shape {
                op: "relu backward",
                left: self.shape.clone(),
                right: upstream.shape().to_vec(),
            });
        }
        let mut g = upstream.clone();
        for (gv, &keep) in g.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *gv = 0.0;
            }
        }
        Ok(LayerGradients {
            input: g,
            params: BTreeMap::new(),
        })
    }
}

fn dims4(t: &Tensor, op: &'static str) -> Result<[usize; 4]> {
    match t.shape()[..] {
        [b, h, w, c] => Ok([b, h, w, c]),
        _ => Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        }),
    }
}

/// Saved forward state of [`avg_pool`].
#[derive(Clone, Debug)]
pub struct AvgPoolBackward {
    input_shape: Vec<usize>,
    size: usize,
}

/// Non-overlapping `size × size` average pooling over an NHWC batch.
pub fn avg_pool(input: &Tensor, size: usize) -> Result<(Tensor, AvgPoolBackward)> {
    let out = avg_pool_forward(input, size)?;
    Ok((
        out,
        AvgPoolBackward {
            input_shape: input.shape().to_vec(),
            size,
        },
    ))
}

pub(crate) fn avg_pool_forward(input: &Tensor, size: usize) -> Result<Tensor> {
    let [b, h, w, c] = dims4(input, "avg_pool")?;
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(Error::invalid(format!(
            "pool size {size} does not divide {h}x{w}"
        )));
    }
    let (ho, wo) = (h / size, w / size);
    let scale = 1.0 / (size * size) as f64;
    let x = input.data();
    let mut out = vec![0.0; b * ho * wo * c];
    for n in 0..b {
        for y in 0..ho {
            for xo in 0..wo {
                let o = ((n * ho + y) * wo + xo) * c;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = ((n * h + y * size + dy) * w + xo * size + dx) * c;
                        for ch in 0..c {
                            out[o + ch] += x[i + ch];
                        }
                    }
                }
                for v in &mut out[o..o + c] {
                    *v *= scale;
                }
            }
        }
    }
    Tensor::new(vec![b, ho, wo, c], out)
}

pub(crate) fn avg_pool_backward(
    input_shape: &[usize],
    size: usize,
    upstream: &Tensor,
) -> Result<Tensor> {
    let [b, h, w, c] = match input_shape[..] {
        [b, h, w, c] => [b, h, w, c],
        _ => return Err(Error::invalid("avg_pool backward expects NHWC input")),
    };
    let (ho, wo) = (h / size, w / size);
    if upstream.shape() != [b, ho, wo, c] {
        return Err(Error::Shape {
            op: "avg_pool backward",
            left: vec![b, ho, wo, c],
            right: upstream.shape().to_vec(),
        });
    }
    let scale = 1.0 / (size * size) as f64;
    let g = upstream.data();
    let mut out = vec![0.0; b * h * w * c];
    for n in 0..b {
        for y in 0..h {
            for x in 0..w {
                let i = ((n * h + y) * w + x) * c;
                let o = ((n * ho + y / size) * wo + x / size) * c;
                for ch in 0..c {
                    out[i + ch] = g[o + ch] * scale;
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}

impl AvgPoolBackward {
    pub fn backward(&self, upstream: &Tensor) -> Result<LayerGradients> {
        Ok(LayerGradients {
            input: avg_pool_backward(&self.input_shape, self.size, upstream)?,
            params: BTreeMap::new(),
        })
    }
}

/// Saved forward state of [`conv2d`].
#[derive(Clone, Debug)]
pub struct Conv2dBackward {
    input_shape: Vec<usize>,
    patches: Tensor,
    kernel: Tensor,
}

/// Valid-padding, stride-1 convolution over an NHWC batch.
///
/// `kernel` has shape `[k, k, c_in, c_out]` and `bias` has shape `[c_out]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(Tensor, Conv2dBackward)> {
    let (out, patches) = conv2d_forward(input, kernel, bias)?;
    Ok((
        out,
        Conv2dBackward {
            input_shape: input.shape().to_vec(),
            patches,
            kernel: kernel.clone(),
        },
    ))
}

fn kernel_dims(input: &Tensor, kernel: &Tensor) -> Result<(usize, usize)> {
    let [_, h, w, c] = dims4(input, "conv2d")?;
    match kernel.shape()[..] {
        [k, k2, ci, co] if k == k2 && ci == c && k >= 1 && k <= h && k <= w => Ok((k, co)),
        _ => Err(Error::Shape {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: kernel.shape().to_vec(),
        }),
    }
}

fn im2col(input: &Tensor, k: usize) -> Result<Tensor> {
    let [b, h, w, c] = dims4(input, "conv2d")?;
    let (ho, wo) = (h - k + 1, w - k + 1);
    let cols = k * k * c;
    let x = input.data();
    let mut out = Vec::with_capacity(b * ho * wo * cols);
    for n in 0..b {
        for y in 0..ho {
            for xo in 0..wo {
                for dy in 0..k {
                    let start = ((n * h + y + dy) * w + xo) * c;
                    out.extend_from_slice(&x[start..start + k * c]);
                }
            }
        }
    }
    Tensor::new(vec![b * ho * wo, cols], out)
}

/// Returns the output and the im2col patch matrix needed for backward.
pub(crate) fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (k, c_out) = kernel_dims(input, kernel)?;
    let [b, h, w, _] = dims4(input, "conv2d")?;
    let patches = im2col(input, k)?;
    let flat_kernel = kernel.clone().reshape(&[patches.shape()[1], c_out])?;
    let out = affine_forward(&patches, &flat_kernel, bias)?;
    let out = out.reshape(&[b, h - k + 1, w - k + 1, c_out])?;
    Ok((out, patches))
}

/// Returns `(d_input, d_kernel, d_bias)`.
pub(crate) fn conv2d_backward(
    input_shape: &[usize],
    patches: &Tensor,
    kernel: &Tensor,
    upstream: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [b, h, w, c] = match input_shape[..] {
        [b, h, w, c] => [b, h, w, c],
        _ => return Err(Error::invalid("conv2d backward expects NHWC input")),
    };
    let k = kernel.shape()[0];
    let c_out = kernel.shape()[3];
    let (ho, wo) = (h - k + 1, w - k + 1);
    if upstream.shape() != [b, ho, wo, c_out] {
        return Err(Error::Shape {
            op: "conv2d backward",
            left: vec![b, ho, wo, c_out],
            right: upstream.shape().to_vec(),
        });
    }
    let g = upstream.clone().reshape(&[b * ho * wo, c_out])?;
    let flat_kernel = kernel.clone().reshape(&[k * k * c, c_out])?;
    let (d_patches, d_kernel, d_bias) = affine_backward(patches, &flat_kernel, &g)?;
    let dp = d_patches.data();
    let mut d_input = vec![0.0; b * h * w * c];
    let cols = k * k * c;
    let mut r = 0;
    for n in 0..b {
        for y in 0..ho {
            for xo in 0..wo {
                let row = &dp[r * cols..(r + 1) * cols];
                for dy in 0..k {
                    let start = ((n * h + y + dy) * w + xo) * c;
                    for (d, s) in d_input[start..start + k * c]
                        .iter_mut()
                        .zip(&row[dy * k * c..(dy + 1) * k * c])
                    {
                        *d += s;
                    }
                }
                r += 1;
            }
        }
    }
    Ok((
        Tensor::new(input_shape.to_vec(), d_input)?,
        d_kernel.reshape(kernel.shape())?,
        d_bias,
    ))
}

impl Conv2dBackward {
    pub fn backward(&self, upstream: &Tensor) -> Result<LayerGradients> {
        let (input, kernel, bias) =
            conv2d_backward(&self.input_shape, &self.patches, &self.kernel, upstream)?;
        Ok(LayerGradients {
            input,
            params: BTreeMap::from([("kernel", kernel), ("bias", bias)]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Central differences of `sum(output * probe)` with respect to every element of `x`.
    fn numeric_grad(x: &Tensor, probe: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> Vec<f64> {
        let eps = 1e-5;
        let objective = |t: &Tensor| -> f64 {
            f(t).data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        (0..x.len())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += eps;
                let mut minus = x.clone();
                minus.data_mut()[i] -= eps;
                (objective(&plus) - objective(&minus)) / (2.0 * eps)
            })
            .collect()
    }

    fn max_rel(analytic: &Tensor, numeric: &[f64]) -> f64 {
        analytic
            .data()
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max)
    }

    #[test]
    fn affine_zero_params() {
        let x = Tensor::from_rows(&[vec![3.0, -2.0]]).unwrap();
        let (y, _) = affine(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[3])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_hand_example() {
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let w = Tensor::identity(2);
        let b = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let (y, _) = affine(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn affine_shape_errors() {
        let x = Tensor::zeros(&[1, 3]);
        assert!(affine(&x, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2])).is_err());
        assert!(affine(
            &Tensor::zeros(&[1, 2]),
            &Tensor::zeros(&[2, 2]),
            &Tensor::zeros(&[3])
        )
        .is_err());
    }

    #[test]
    fn affine_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[4, 5], &mut rng);
        let w = random(&[5, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let probe = random(&[4, 3], &mut rng);
        let (_, tape) = affine(&x, &w, &b).unwrap();
        let grads = tape.backward(&probe).unwrap();

        let n_x = numeric_grad(&x, &probe, |t| affine(t, &w, &b).unwrap().0);
        let n_w = numeric_grad(&w, &probe, |t| affine(&x, t, &b).unwrap().0);
        let n_b = numeric_grad(&b, &probe, |t| affine(&x, &w, t).unwrap().0);
        assert!(max_rel(&grads.input, &n_x) < 1e-4);
        assert!(max_rel(&grads.params["weight"], &n_w) < 1e-4);
        assert!(max_rel(&grads.params["bias"], &n_b) < 1e-4);
    }

    #[test]
    fn relu_forward_and_backward() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, tape) = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = tape.backward(&Tensor::filled(&[3], 5.0)).unwrap();
        assert_eq!(g.input.data(), &[0.0, 0.0, 5.0]);

        let x = Tensor::vector(vec![-1.0, 2.0]).unwrap();
        let (_, tape) = relu(&x);
        let g = tape.backward(&Tensor::filled(&[2], 5.0)).unwrap();
        assert_eq!(g.input.data(), &[0.0, 5.0]);

        let pos = Tensor::vector(vec![0.5, 1.0, 7.0]).unwrap();
        assert_eq!(relu(&pos).0, pos);
    }

    #[test]
    fn pool_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 4, 6, 3], &mut rng);
        let probe = random(&[2, 2, 3, 3], &mut rng);
        let (y, tape) = avg_pool(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3, 3]);
        let g = tape.backward(&probe).unwrap();
        let n = numeric_grad(&x, &probe, |t| avg_pool(t, 2).unwrap().0);
        assert!(max_rel(&g.input, &n) < 1e-4);
        assert!(avg_pool(&x, 4).is_err());
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 5, 4, 3], &mut rng);
        let k = random(&[3, 3, 3, 2], &mut rng);
        let b = random(&[2], &mut rng);
        let (y, _) = conv2d(&x, &k, &b).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 2]);
        let xi = |n: usize, r: usize, c: usize, ch: usize| x.data()[((n * 5 + r) * 4 + c) * 3 + ch];
        let ki = |dy: usize, dx: usize, ci: usize, co: usize| {
            k.data()[((dy * 3 + dx) * 3 + ci) * 2 + co]
        };
        for n in 0..2 {
            for r in 0..3 {
                for c in 0..2 {
                    for co in 0..2 {
                        let mut s = b.data()[co];
                        for dy in 0..3 {
                            for dx in 0..3 {
                                for ci in 0..3 {
                                    s += xi(n, r + dy, c + dx, ci) * ki(dy, dx, ci, co);
                                }
                            }
                        }
                        let got = y.data()[((n * 3 + r) * 2 + c) * 2 + co];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[2, 5, 5, 3], &mut rng);
        let k = random(&[3, 3, 3, 4], &mut rng);
        let b = random(&[4], &mut rng);
        let probe = random(&[2, 3, 3, 4], &mut rng);
        let (_, tape) = conv2d(&x, &k, &b).unwrap();
        let g = tape.backward(&probe).unwrap();
        let n_x = numeric_grad(&x, &probe, |t| conv2d(t, &k, &b).unwrap().0);
        let n_k = numeric_grad(&k, &probe, |t| conv2d(&x, t, &b).unwrap().0);
        let n_b = numeric_grad(&b, &probe, |t| conv2d(&x, &k, t).unwrap().0);
        assert!(max_rel(&g.input, &n_x) < 1e-4);
        assert!(max_rel(&g.params["kernel"], &n_k) < 1e-4);
        assert!(max_rel(&g.params["bias"], &n_b) < 1e-4);
    }
}
