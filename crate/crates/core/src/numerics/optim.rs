use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD-with-momentum state: one velocity tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64, param_shapes: &[&[usize]]) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!(
                "momentum {momentum} outside [0, 1)"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}

/// `v ← momentum·v + g; p ← p − lr·v`, applied to every parameter in order.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut OptimizerState,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::Shape {
            op: "sgd_step",
            left: vec![params.len(), state.velocity.len()],
            right: vec![grads.len()],
        });
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        p.same_shape(g, "sgd_step")?;
        p.same_shape(v, "sgd_step")?;
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    if params
        .iter()
        .any(|p| p.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("sgd_step"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::vector(vec![v]).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = scalar(1.25);
        let mut state = OptimizerState::new(0.0, 0.9, &[&[1]]).unwrap();
        sgd_step(&mut [&mut p], &[scalar(3.0)], &mut state).unwrap();
        assert_eq!(p.data(), &[1.25]);
    }

    #[test]
    fn plain_step() {
        let mut p = scalar(1.0);
        let mut state = OptimizerState::new(0.1, 0.0, &[&[1]]).unwrap();
        sgd_step(&mut [&mut p], &[scalar(0.5)], &mut state).unwrap();
        assert!((p.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = scalar(0.0);
        let mut state = OptimizerState::new(0.1, 0.9, &[&[1]]).unwrap();
        for _ in 0..2 {
            sgd_step(&mut [&mut p], &[scalar(1.0)], &mut state).unwrap();
        }
        assert!((p.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = OptimizerState::new(0.1, 0.0, &[&[2]]).unwrap();
        assert!(sgd_step(&mut [&mut p], &[Tensor::zeros(&[3])], &mut state).is_err());
        assert!(OptimizerState::new(0.1, 1.0, &[]).is_err());
    }
}
