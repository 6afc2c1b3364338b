use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A model whose training loss can be evaluated and differentiated with
/// respect to its parameters.
pub trait Differentiable {
    type Batch;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    fn loss(&self, batch: &Self::Batch) -> Result<f64>;

    /// Loss and one gradient per parameter, in the order of [`parameters_mut`].
    ///
    /// [`parameters_mut`]: Differentiable::parameters_mut
    fn loss_and_gradients(&self, batch: &Self::Batch) -> Result<(f64, Vec<Tensor>)>;
}

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Largest relative error between analytic gradients and central differences
/// `(L(θ+eps) − L(θ−eps)) / 2eps` over every scalar parameter.
///
/// Parameters are perturbed in place and restored bit-exactly afterwards.
pub fn gradient_check<M: Differentiable>(model: &mut M, batch: &M::Batch, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let (_, analytic) = model.loss_and_gradients(batch)?;
    let sizes: Vec<usize> = model.parameters_mut().iter().map(|p| p.len()).collect();
    if sizes.len() != analytic.len() {
        return Err(Error::invalid(
            "gradient count differs from parameter count",
        ));
    }
    let mut worst = 0.0f64;
    for (pi, &size) in sizes.iter().enumerate() {
        for i in 0..size {
            let original = model.parameters_mut()[pi].data()[i];
            model.parameters_mut()[pi].data_mut()[i] = original + eps;
            let plus = model.loss(batch);
            model.parameters_mut()[pi].data_mut()[i] = original - eps;
            let minus = model.loss(batch);
            model.parameters_mut()[pi].data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[pi].data()[i], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `L(p) = Σ c_i p_i²`.
    struct Quadratic {
        p: Tensor,
        c: Vec<f64>,
        scale: f64,
    }

    impl Differentiable for Quadratic {
        type Batch = ();

        fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.p]
        }

        fn loss(&self, _: &()) -> Result<f64> {
            Ok(self
                .p
                .data()
                .iter()
                .zip(&self.c)
                .map(|(p, c)| c * p * p)
                .sum())
        }

        fn loss_and_gradients(&self, b: &()) -> Result<(f64, Vec<Tensor>)> {
            let g = self
                .p
                .data()
                .iter()
                .zip(&self.c)
                .map(|(p, c)| self.scale * 2.0 * c * p)
                .collect();
            Ok((self.loss(b)?, vec![Tensor::vector(g)?]))
        }
    }

    #[test]
    fn exact_gradients_pass_and_scaled_fail() {
        let mut q = Quadratic {
            p: Tensor::vector(vec![0.3, -1.2, 2.0]).unwrap(),
            c: vec![1.0, 0.5, 3.0],
            scale: 1.0,
        };
        let before = q.p.clone();
        assert!(gradient_check(&mut q, &(), 1e-5).unwrap() < 1e-8);
        assert_eq!(q.p, before);
        q.scale = 2.0;
        assert!(gradient_check(&mut q, &(), 1e-5).unwrap() > 0.4);
    }

    #[test]
    fn rejects_non_positive_eps() {
        let mut q = Quadratic {
            p: Tensor::vector(vec![1.0]).unwrap(),
            c: vec![1.0],
            scale: 1.0,
        };
        assert!(gradient_check(&mut q, &(), 0.0).is_err());
        assert!(gradient_check(&mut q, &(), -1e-5).is_err());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
