use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied inside every logarithm of a probability.
pub const LOG_FLOOR: f64 = 1e-12;

/// Natural log of `p`, floored at [`LOG_FLOOR`].
pub fn floored_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Mse,
}

/// Class-probability vector produced by a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
}

impl Prediction {
    /// Index of the most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            })
            .0
    }
}

/// A one-hot target, stored as its class index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    class: usize,
    classes: usize,
}

impl OneHot {
    pub fn new(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::LabelOutOfRange {
                label: class,
                classes,
            });
        }
        Ok(Self { class, classes })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn len(&self) -> usize {
        self.classes
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, j: usize) -> f64 {
        if j == self.class {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.classes).map(|j| self.get(j)).collect()
    }

    fn check(&self, probs: &[f64]) -> Result<()> {
        if probs.len() != self.classes {
            return Err(Error::ShapeMismatch {
                expected: vec![self.classes],
                found: vec![probs.len()],
            });
        }
        Ok(())
    }
}

/// Loss of a prediction against a one-hot target.
///
/// Cross-entropy is `-sum_j t_j ln(max(p_j, LOG_FLOOR))`; MSE is the squared
/// Euclidean distance `||p - t||^2`.
pub fn loss(pred: &Prediction, target: &OneHot, kind: LossKind) -> Result<f64> {
    target.check(&pred.probs)?;
    Ok(match kind {
        LossKind::CrossEntropy => -floored_ln(pred.probs[target.class]),
        LossKind::Mse => pred
            .probs
            .iter()
            .enumerate()
            .map(|(j, p)| (p - target.get(j)).powi(2))
            .sum(),
    })
}

/// Derivative of [`loss`] with respect to each probability.
pub(crate) fn loss_grad_probs(probs: &[f64], target: &OneHot, kind: LossKind) -> Result<Vec<f64>> {
    target.check(probs)?;
    Ok(match kind {
        LossKind::CrossEntropy => {
            let mut g = vec![0.0; probs.len()];
            let p = probs[target.class];
            if p > LOG_FLOOR {
                g[target.class] = -1.0 / p;
            }
            g
        }
        LossKind::Mse => probs
            .iter()
            .enumerate()
            .map(|(j, p)| 2.0 * (p - target.get(j)))
            .collect(),
    })
}

/// Shannon entropy in nats with `0 ln 0 = 0` and the same log floor as the loss.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * floored_ln(p))
        .sum::<f64>()
}
