use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let [_, n] = logits.dims2("softmax")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

struct RowTerms {
    /// Per-row `-log softmax(z)[y]`.
    ce: Vec<f64>,
    /// `softmax(z) - onehot(y)` per row.
    residual: Tensor,
}

fn row_terms(logits: &Tensor, labels: &[usize]) -> Result<RowTerms> {
    let [b, n] = logits.dims2("cross_entropy")?;
    if labels.len() != b {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if b == 0 {
        return Err(Error::Empty("cross_entropy batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: n,
        });
    }
    let mut ce = Vec::with_capacity(b);
    let mut residual = logits.clone();
    for (row, &y) in residual.data_mut().chunks_mut(n).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let target = row[y] - m;
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        ce.push(sum.ln() - target);
        for v in row.iter_mut() {
            *v /= sum;
        }
        row[y] -= 1.0;
    }
    Ok(RowTerms { ce, residual })
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let RowTerms { ce, mut residual } = row_terms(logits, labels)?;
    let b = labels.len() as f64;
    let loss = ce.iter().sum::<f64>() / b;
    for v in residual.data_mut() {
        *v /= b;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy"));
    }
    Ok((loss, residual.ensure_finite("softmax_cross_entropy")?))
}

/// Class-weighted softmax cross-entropy, normalized by the sum of the weights
/// applied to the batch: `Σ w[y]·ce / Σ w[y]`.
///
/// With every weight equal to 1 this is bit-identical to [`softmax_cross_entropy`].
pub fn weighted_softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    class_weights: &Tensor,
) -> Result<(f64, Tensor)> {
    let [_, n] = logits.dims2("weighted_cross_entropy")?;
    if class_weights.shape() != [n] {
        return Err(Error::Shape {
            op: "weighted_cross_entropy",
            left: logits.shape().to_vec(),
            right: class_weights.shape().to_vec(),
        });
    }
    if let Some(w) = class_weights.data().iter().find(|&&w| w <= 0.0) {
        return Err(Error::invalid(format!("class weight {w} is not positive")));
    }
    let RowTerms { ce, mut residual } = row_terms(logits, labels)?;
    let w = class_weights.data();
    let total: f64 = labels.iter().map(|&y| w[y]).sum();
    let weighted: f64 = ce.iter().zip(labels).map(|(c, &y)| w[y] * c).sum();
    let loss = weighted / total;
    for (row, &y) in residual.data_mut().chunks_mut(n).zip(labels) {
        for v in row {
            *v = *v * w[y] / total;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("weighted_softmax_cross_entropy"));
    }
    Ok((
        loss,
        residual.ensure_finite("weighted_softmax_cross_entropy")?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::relative_error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_class_uniform_logits() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let w = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let (loss, _) = weighted_softmax_cross_entropy(&logits, &[0], &w).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let logits = Tensor::zeros(&[1, 2]);
        let ones = Tensor::filled(&[2], 1.0);
        assert!(matches!(
            weighted_softmax_cross_entropy(&logits, &[2], &ones),
            Err(Error::LabelOutOfRange { .. })
        ));
        let bad = Tensor::vector(vec![1.0, 0.0]).unwrap();
        assert!(weighted_softmax_cross_entropy(&logits, &[0], &bad).is_err());
        let neg = Tensor::vector(vec![1.0, -2.0]).unwrap();
        assert!(weighted_softmax_cross_entropy(&logits, &[0], &neg).is_err());
    }

    #[test]
    fn stable_for_huge_logits() {
        let logits = Tensor::from_rows(&[vec![1000.0, -1000.0, 999.0]]).unwrap();
        let (loss, g) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert!(g.data().iter().all(|v| v.is_finite()));
    }

    fn loss_at(logits: &Tensor, labels: &[usize], w: &Tensor) -> f64 {
        weighted_softmax_cross_entropy(logits, labels, w).unwrap().0
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logits = Tensor::new(vec![4, 4], data).unwrap();
        let labels = [0, 3, 1, 3];
        let w = Tensor::vector(vec![3.0, 0.5, 1.2, 0.7]).unwrap();
        let (_, g) = weighted_softmax_cross_entropy(&logits, &labels, &w).unwrap();
        let eps = 1e-5;
        for i in 0..16 {
            let mut p = logits.clone();
            p.data_mut()[i] += eps;
            let mut m = logits.clone();
            m.data_mut()[i] -= eps;
            let n = (loss_at(&p, &labels, &w) - loss_at(&m, &labels, &w)) / (2.0 * eps);
            assert!(relative_error(g.data()[i], n) < 1e-4, "element {i}");
        }
    }

    fn batch() -> impl Strategy<Value = (Tensor, Vec<usize>)> {
        (1usize..6, 2usize..6).prop_flat_map(|(b, n)| {
            (
                proptest::collection::vec(-50.0f64..50.0, b * n),
                proptest::collection::vec(0..n, b),
            )
                .prop_map(move |(d, y)| (Tensor::new(vec![b, n], d).unwrap(), y))
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one((logits, _) in batch()) {
            let p = softmax(&logits).unwrap();
            for i in 0..p.rows() {
                let s: f64 = p.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn unit_weights_are_bit_identical((logits, labels) in batch()) {
            let n = logits.shape()[1];
            let plain = softmax_cross_entropy(&logits, &labels).unwrap();
            let weighted = weighted_softmax_cross_entropy(&logits, &labels, &Tensor::filled(&[n], 1.0)).unwrap();
            prop_assert_eq!(plain.0.to_bits(), weighted.0.to_bits());
            prop_assert_eq!(plain.1, weighted.1);
        }

        #[test]
        fn constant_weights_match_plain((logits, labels) in batch(), c in 0.01f64..100.0) {
            let n = logits.shape()[1];
            let plain = softmax_cross_entropy(&logits, &labels).unwrap().0;
            let weighted = weighted_softmax_cross_entropy(&logits, &labels, &Tensor::filled(&[n], c)).unwrap().0;
            prop_assert!((plain - weighted).abs() <= 1e-12 * (1.0 + plain.abs()));
        }
    }
}
