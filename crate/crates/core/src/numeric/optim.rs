use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Tensor};

/// Heavy-ball momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, lr: f64, momentum: f64) -> Result<Self, NumericError> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(NumericError::Invalid(format!(
                "learning rate must be >= 0, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NumericError::Invalid(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        let velocity = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Ok(Self {
            lr,
            momentum,
            velocity,
        })
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub(crate) fn from_parts(lr: f64, momentum: f64, velocity: Vec<Tensor>) -> Self {
        Self {
            lr,
            momentum,
            velocity,
        }
    }

    /// One momentum step over every parameter.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), NumericError> {
        if grads.len() != params.len() || self.velocity.len() != params.len() {
            return Err(NumericError::Shape(format!(
                "sgd_step: {} parameters, {} gradients, {} velocity buffers",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for ((param, grad), vel) in params.tensors_mut().zip(grads).zip(&mut self.velocity) {
            if param.shape() != grad.shape() || param.shape() != vel.shape() {
                return Err(NumericError::Shape(format!(
                    "sgd_step: parameter {:?}, gradient {:?}, velocity {:?}",
                    param.shape(),
                    grad.shape(),
                    vel.shape()
                )));
            }
            for ((p, g), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(vel.data_mut())
            {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(theta: f64) -> ParamStore {
        let mut p = ParamStore::default();
        p.push("theta", Tensor::scalar(theta));
        p
    }

    #[test]
    fn one_momentum_step() {
        let mut params = single(1.0);
        let mut opt = OptimizerState::new(&params, 0.001, 0.9).unwrap();
        opt.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        assert_eq!(opt.velocity()[0].data(), &[1.0]);
        assert_eq!(params.get(0).data(), &[0.999]);
    }

    #[test]
    fn two_momentum_steps() {
        let mut params = single(1.0);
        let mut opt = OptimizerState::new(&params, 0.001, 0.9).unwrap();
        for _ in 0..2 {
            opt.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        }
        assert!((opt.velocity()[0].data()[0] - 1.9).abs() < 1e-15);
        assert!((params.get(0).data()[0] - 0.9971).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_plain_sgd() {
        let mut params = single(2.0);
        let mut opt = OptimizerState::new(&params, 0.1, 0.0).unwrap();
        opt.step(&mut params, &[Tensor::scalar(3.0)]).unwrap();
        opt.step(&mut params, &[Tensor::scalar(3.0)]).unwrap();
        assert!((params.get(0).data()[0] - (2.0 - 0.3 - 0.3)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = single(2.0);
        let mut opt = OptimizerState::new(&params, 0.1, 0.5).unwrap();
        let err = opt.step(&mut params, &[Tensor::zeros(&[2])]);
        assert!(matches!(err, Err(NumericError::Shape(_))));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0]).unwrap()];
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((g[0].l2_norm() - 1.0).abs() < 1e-15);
    }
}
