use super::model::{ModelState, ParamGradient};
use crate::error::{Error, Result};

/// Momentum SGD: `v <- momentum * v + g`, `w <- w - lr * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum }
    }

    pub fn step(&self, model: &mut ModelState, grad: &ParamGradient, velocity: &mut [f64]) -> Result<()> {
        let n = model.param_count();
        if grad.grad.len() != n || velocity.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                found: vec![grad.grad.len(), velocity.len()],
            });
        }
        for ((w, v), g) in model.params_mut().iter_mut().zip(velocity.iter_mut()).zip(&grad.grad) {
            *v = self.momentum * *v + g;
            *w -= self.lr * *v;
        }
        Ok(())
    }
}
