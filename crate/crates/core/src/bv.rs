//! Bias and variance of an ensemble of client models, and their input
//! gradients.
//!
//! With `f_k` the class-probability output of member `k` and `K` members, the
//! main prediction is the member average `y_m = (1/K) sum_k f_k(x)`. Under
//! cross-entropy
//!
//! ```text
//! B(x)     = (1/K) sum_k CE(f_k(x), t)
//! V(x)     = H(y_m)
//! grad B   = (1/K) sum_k grad_x CE(f_k(x), t)
//! grad V   = -(1/K) sum_k sum_j (ln y_m^j + 1) grad_x f_k^j(x)
//! ```
//!
//! and under squared error
//!
//! ```text
//! B(x)     = ||y_m - t||^2
//! V(x)     = 1/(K-1) sum_k ||f_k(x) - y_m||^2
//! grad B   = 2 sum_j (y_m^j - t^j) grad_x y_m^j
//! grad V   = 2/(K-1) sum_k sum_j (f_k^j - y_m^j) (grad_x f_k^j - grad_x y_m^j)
//! ```
//!
//! Every logarithm is floored at [`LOG_FLOOR`](crate::nn::LOG_FLOOR). Member
//! contributions are reduced in member order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{entropy, floored_ln, loss, LossKind, ModelState, OneHot, Prediction};
use crate::tensor::TensorBuffer;

/// Weighting of the variance term in the attack objective `B + lambda * V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tradeoff {
    Lambda(f64),
    /// Attack the variance term alone.
    VarianceOnly,
}

impl Default for Tradeoff {
    fn default() -> Self {
        Tradeoff::Lambda(1.0)
    }
}

impl Tradeoff {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Tradeoff::Lambda(l) if !(l >= 0.0 && l.is_finite()) => {
                Err(Error::AttackConfig(format!("lambda must be finite and >= 0, got {l}")))
            }
            _ => Ok(()),
        }
    }
}

/// Bias, variance and their input gradients at one example.
#[derive(Debug, Clone)]
pub struct BvReport {
    pub main_prediction: Vec<f64>,
    pub bias: f64,
    pub variance: f64,
    pub grad_bias: TensorBuffer,
    pub grad_variance: TensorBuffer,
}

/// Read-only view over the models of one round's sampled clients.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleView<'a> {
    members: &'a [ModelState],
}

/// Member outputs and per-class input Jacobians at one example.
struct Jacobians {
    probs: Vec<Vec<f64>>,
    /// `grads[k][j]` is the input gradient of member k's class-j probability.
    grads: Vec<Vec<TensorBuffer>>,
}

/// Mean of `rows` computed as `rows[0] + mean(rows[k] - rows[0])`, so that
/// identical rows average to themselves exactly.
fn shifted_mean(rows: &[&[f64]]) -> Vec<f64> {
    let base = rows[0];
    let inv = 1.0 / rows.len() as f64;
    let mut acc = vec![0.0; base.len()];
    for row in &rows[1..] {
        for ((a, r), b) in acc.iter_mut().zip(*row).zip(base) {
            *a += r - b;
        }
    }
    base.iter().zip(acc).map(|(b, a)| b + a * inv).collect()
}

fn sum_sq(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|d| d * d).sum()
}

impl<'a> EnsembleView<'a> {
    pub fn new(members: &'a [ModelState]) -> Result<Self> {
        let first = members.first().ok_or(Error::Empty("ensemble"))?;
        if members[1..].iter().any(|m| !m.same_arch(first)) {
            return Err(Error::MixedEnsemble);
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &'a [ModelState] {
        self.members
    }

    fn predictions(&self, x: &TensorBuffer) -> Result<Vec<Prediction>> {
        self.members.iter().map(|m| m.predict(x)).collect()
    }

    fn jacobians(&self, x: &TensorBuffer) -> Result<Jacobians> {
        let mut probs = Vec::with_capacity(self.len());
        let mut grads = Vec::with_capacity(self.len());
        for m in self.members {
            let (p, g) = m.grad_input_prediction(x)?;
            probs.push(p.probs);
            grads.push(g);
        }
        Ok(Jacobians { probs, grads })
    }

    fn mean_of(probs: &[Vec<f64>]) -> Vec<f64> {
        shifted_mean(&probs.iter().map(Vec::as_slice).collect::<Vec<_>>())
    }

    /// `grad_x y_m^j` for every class j.
    fn mean_jacobian(jac: &Jacobians) -> Vec<TensorBuffer> {
        let classes = jac.grads[0].len();
        (0..classes)
            .map(|j| {
                let rows: Vec<&[f64]> = jac.grads.iter().map(|g| g[j].data()).collect();
                let shape = jac.grads[0][j].shape().to_vec();
                TensorBuffer::new(shape, shifted_mean(&rows)).expect("shape preserved")
            })
            .collect()
    }

    /// Average of the members' predicted class probabilities.
    pub fn main_prediction(&self, x: &TensorBuffer) -> Result<Vec<f64>> {
        let probs: Vec<Vec<f64>> = self.predictions(x)?.into_iter().map(|p| p.probs).collect();
        Ok(Self::mean_of(&probs))
    }

    pub fn bias_ce(&self, x: &TensorBuffer, t: &OneHot) -> Result<f64> {
        let mut total = 0.0;
        for p in self.predictions(x)? {
            total += loss(&p, t, LossKind::CrossEntropy)?;
        }
        Ok(total / self.len() as f64)
    }

    /// Entropy of the main prediction.
    pub fn variance_ce(&self, x: &TensorBuffer) -> Result<f64> {
        Ok(entropy(&self.main_prediction(x)?))
    }

    pub fn grad_bias_ce(&self, x: &TensorBuffer, t: &OneHot) -> Result<TensorBuffer> {
        let inv = 1.0 / self.len() as f64;
        let mut acc = TensorBuffer::zeros(x.shape());
        for m in self.members {
            acc.add_scaled(&m.grad_input(x, t, LossKind::CrossEntropy)?.grad, inv)?;
        }
        Ok(acc)
    }

    pub fn grad_variance_ce(&self, x: &TensorBuffer) -> Result<TensorBuffer> {
        let jac = self.jacobians(x)?;
        let main = Self::mean_of(&jac.probs);
        let coeff: Vec<f64> = main.iter().map(|&y| floored_ln(y) + 1.0).collect();
        let scale = -1.0 / self.len() as f64;
        let mut acc = TensorBuffer::zeros(x.shape());
        for member in &jac.grads {
            for (g, c) in member.iter().zip(&coeff) {
                acc.add_scaled(g, scale * c)?;
            }
        }
        Ok(acc)
    }

    /// Squared distance from the main prediction to the target.
    pub fn bias_mse(&self, x: &TensorBuffer, t: &OneHot) -> Result<f64> {
        let main = self.main_prediction(x)?;
        check_target(&main, t)?;
        Ok(sum_sq(main.iter().enumerate().map(|(j, y)| y - t.get(j))))
    }

    /// Unbiased spread of member outputs around the main prediction.
    pub fn variance_mse(&self, x: &TensorBuffer) -> Result<f64> {
        let k = self.require_pair()?;
        let probs: Vec<Vec<f64>> = self.predictions(x)?.into_iter().map(|p| p.probs).collect();
        let main = Self::mean_of(&probs);
        let total: f64 = probs
            .iter()
            .map(|p| sum_sq(p.iter().zip(&main).map(|(a, b)| a - b)))
            .sum();
        Ok(total / (k - 1) as f64)
    }

    pub fn grad_bias_mse(&self, x: &TensorBuffer, t: &OneHot) -> Result<TensorBuffer> {
        let jac = self.jacobians(x)?;
        let main = Self::mean_of(&jac.probs);
        check_target(&main, t)?;
        let mut acc = TensorBuffer::zeros(x.shape());
        for (j, g) in Self::mean_jacobian(&jac).iter().enumerate() {
            acc.add_scaled(g, 2.0 * (main[j] - t.get(j)))?;
        }
        Ok(acc)
    }

    pub fn grad_variance_mse(&self, x: &TensorBuffer) -> Result<TensorBuffer> {
        let k = self.require_pair()?;
        let jac = self.jacobians(x)?;
        let main = Self::mean_of(&jac.probs);
        let main_grad = Self::mean_jacobian(&jac);
        let scale = 2.0 / (k - 1) as f64;
        let mut acc = TensorBuffer::zeros(x.shape());
        for (probs, grads) in jac.probs.iter().zip(&jac.grads) {
            for j in 0..main.len() {
                let dev = probs[j] - main[j];
                if dev == 0.0 {
                    continue;
                }
                let mut d = grads[j].clone();
                d.add_scaled(&main_grad[j], -1.0)?;
                acc.add_scaled(&d, scale * dev)?;
            }
        }
        Ok(acc)
    }

    pub fn bias(&self, x: &TensorBuffer, t: &OneHot, kind: LossKind) -> Result<f64> {
        match kind {
            LossKind::CrossEntropy => self.bias_ce(x, t),
            LossKind::Mse => self.bias_mse(x, t),
        }
    }

    pub fn variance(&self, x: &TensorBuffer, kind: LossKind) -> Result<f64> {
        match kind {
            LossKind::CrossEntropy => self.variance_ce(x),
            LossKind::Mse => self.variance_mse(x),
        }
    }

    pub fn grad_bias(&self, x: &TensorBuffer, t: &OneHot, kind: LossKind) -> Result<TensorBuffer> {
        match kind {
            LossKind::CrossEntropy => self.grad_bias_ce(x, t),
            LossKind::Mse => self.grad_bias_mse(x, t),
        }
    }

    pub fn grad_variance(&self, x: &TensorBuffer, kind: LossKind) -> Result<TensorBuffer> {
        match kind {
            LossKind::CrossEntropy => self.grad_variance_ce(x),
            LossKind::Mse => self.grad_variance_mse(x),
        }
    }

    /// Value of the attack objective `B + lambda * V` (or `V` alone).
    pub fn objective(&self, x: &TensorBuffer, t: &OneHot, tradeoff: Tradeoff, kind: LossKind) -> Result<f64> {
        tradeoff.validate()?;
        match tradeoff {
            Tradeoff::VarianceOnly => self.variance(x, kind),
            Tradeoff::Lambda(0.0) => self.bias(x, t, kind),
            Tradeoff::Lambda(l) => Ok(self.bias(x, t, kind)? + l * self.variance(x, kind)?),
        }
    }

    /// Input gradient of [`objective`](Self::objective).
    pub fn objective_grad(
        &self,
        x: &TensorBuffer,
        t: &OneHot,
        tradeoff: Tradeoff,
        kind: LossKind,
    ) -> Result<TensorBuffer> {
        tradeoff.validate()?;
        match tradeoff {
            Tradeoff::VarianceOnly => self.grad_variance(x, kind),
            Tradeoff::Lambda(0.0) => self.grad_bias(x, t, kind),
            Tradeoff::Lambda(l) => {
                let mut g = self.grad_bias(x, t, kind)?;
                g.add_scaled(&self.grad_variance(x, kind)?, l)?;
                Ok(g)
            }
        }
    }

    pub fn report(&self, x: &TensorBuffer, t: &OneHot, kind: LossKind) -> Result<BvReport> {
        Ok(BvReport {
            main_prediction: self.main_prediction(x)?,
            bias: self.bias(x, t, kind)?,
            variance: self.variance(x, kind)?,
            grad_bias: self.grad_bias(x, t, kind)?,
            grad_variance: self.grad_variance(x, kind)?,
        })
    }

    fn require_pair(&self) -> Result<usize> {
        if self.len() < 2 {
            return Err(Error::DegenerateEnsemble(
                "squared-error variance needs at least two members",
            ));
        }
        Ok(self.len())
    }
}

fn check_target(main: &[f64], t: &OneHot) -> Result<()> {
    if main.len() != t.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![main.len()],
            found: vec![t.len()],
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchSpec;

    /// A one-input linear-softmax model whose output at x = 0 is `probs`.
    fn fixed_output(probs: &[f64]) -> ModelState {
        let c = probs.len();
        let mut params = vec![0.0; c];
        params.extend(probs.iter().map(|p| p.ln()));
        ModelState::new(ArchSpec::mlp(1, &[], c), params).unwrap()
    }

    fn origin() -> TensorBuffer {
        TensorBuffer::vector(vec![0.0])
    }

    fn ensemble_of(outputs: &[&[f64]]) -> Vec<ModelState> {
        outputs.iter().map(|p| fixed_output(p)).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn main_prediction_examples() {
        let m = ensemble_of(&[&[0.2, 0.8], &[0.4, 0.6]]);
        let y = EnsembleView::new(&m).unwrap().main_prediction(&origin()).unwrap();
        assert!(close(&y, &[0.3, 0.7], 1e-12));

        let m = ensemble_of(&[&[0.1, 0.9]]);
        let y = EnsembleView::new(&m).unwrap().main_prediction(&origin()).unwrap();
        assert!(close(&y, &[0.1, 0.9], 1e-15));

        let m = ensemble_of(&[&[1.0 - 1e-15, 1e-15], &[1e-15, 1.0 - 1e-15], &[0.5, 0.5]]);
        let y = EnsembleView::new(&m).unwrap().main_prediction(&origin()).unwrap();
        assert!(close(&y, &[0.5, 0.5], 1e-12));
    }

    #[test]
    fn empty_and_mixed_ensembles() {
        assert!(matches!(EnsembleView::new(&[]), Err(Error::Empty(_))));
        let mixed = vec![fixed_output(&[0.5, 0.5]), fixed_output(&[0.2, 0.3, 0.5])];
        assert!(matches!(EnsembleView::new(&mixed), Err(Error::MixedEnsemble)));
    }

    #[test]
    fn bias_ce_examples() {
        let t0 = OneHot::new(0, 2).unwrap();
        let m = ensemble_of(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let b = EnsembleView::new(&m).unwrap().bias_ce(&origin(), &t0).unwrap();
        assert!((b - std::f64::consts::LN_2).abs() < 1e-12);

        let m = ensemble_of(&[&[0.25, 0.75], &[0.75, 0.25]]);
        let b = EnsembleView::new(&m).unwrap().bias_ce(&origin(), &t0).unwrap();
        assert!((b - 0.836_988_216_785_835_8).abs() < 1e-12);

        // saturated members predicting the target exactly
        let sure = ModelState::new(ArchSpec::mlp(1, &[], 2), vec![0.0, 0.0, 800.0, 0.0]).unwrap();
        let m = vec![sure.clone(), sure];
        let b = EnsembleView::new(&m).unwrap().bias_ce(&origin(), &t0).unwrap();
        assert!(b.abs() < 1e-9);
    }

    #[test]
    fn variance_ce_examples() {
        let m = ensemble_of(&[&[0.25, 0.75], &[0.75, 0.25]]);
        let v = EnsembleView::new(&m).unwrap().variance_ce(&origin()).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

        let m = ensemble_of(&[&[0.25, 0.75]]);
        let v = EnsembleView::new(&m).unwrap().variance_ce(&origin()).unwrap();
        assert!((v - 0.562_335_144_618_808_3).abs() < 1e-12);

        let sure = ModelState::new(ArchSpec::mlp(1, &[], 2), vec![0.0, 0.0, 800.0, 0.0]).unwrap();
        let v = EnsembleView::new(std::slice::from_ref(&sure)).unwrap().variance_ce(&origin()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn mse_examples() {
        let t1 = OneHot::new(1, 2).unwrap();
        let t0 = OneHot::new(0, 2).unwrap();
        let m = ensemble_of(&[&[0.2, 0.8], &[0.4, 0.6]]);
        let e = EnsembleView::new(&m).unwrap();
        assert!((e.bias_mse(&origin(), &t1).unwrap() - 0.18).abs() < 1e-12);

        let m = ensemble_of(&[&[0.5, 0.5]]);
        let e = EnsembleView::new(&m).unwrap();
        assert!((e.bias_mse(&origin(), &t0).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(e.variance_mse(&origin()), Err(Error::DegenerateEnsemble(_))));
        assert!(matches!(e.grad_variance_mse(&origin()), Err(Error::DegenerateEnsemble(_))));

        let m = ensemble_of(&[&[0.3, 0.7], &[0.3, 0.7], &[0.3, 0.7]]);
        let e = EnsembleView::new(&m).unwrap();
        assert_eq!(e.variance_mse(&origin()).unwrap(), 0.0);
    }

    #[test]
    fn mse_variance_of_opposite_members() {
        let sure0 = ModelState::new(ArchSpec::mlp(1, &[], 2), vec![0.0, 0.0, 800.0, 0.0]).unwrap();
        let sure1 = ModelState::new(ArchSpec::mlp(1, &[], 2), vec![0.0, 0.0, 0.0, 800.0]).unwrap();
        let m = vec![sure0, sure1];
        let v = EnsembleView::new(&m).unwrap().variance_mse(&origin()).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn objective_modes() {
        let arch = ArchSpec::mlp(3, &[4], 3);
        let m: Vec<_> = (0..3).map(|s| ModelState::init(arch.clone(), s).unwrap()).collect();
        let e = EnsembleView::new(&m).unwrap();
        let x = TensorBuffer::vector(vec![0.2, 0.5, 0.9]);
        let t = OneHot::new(1, 3).unwrap();
        for kind in [LossKind::CrossEntropy, LossKind::Mse] {
            let b = e.grad_bias(&x, &t, kind).unwrap();
            let v = e.grad_variance(&x, kind).unwrap();
            assert_eq!(e.objective_grad(&x, &t, Tradeoff::Lambda(0.0), kind).unwrap(), b);
            assert_eq!(e.objective_grad(&x, &t, Tradeoff::VarianceOnly, kind).unwrap(), v);
            let mut both = b.clone();
            both.add_scaled(&v, 2.5).unwrap();
            assert_eq!(e.objective_grad(&x, &t, Tradeoff::Lambda(2.5), kind).unwrap(), both);
        }
        assert!(e.objective_grad(&x, &t, Tradeoff::Lambda(-1.0), LossKind::Mse).is_err());
    }

    #[test]
    fn constant_members_have_zero_gradients() {
        let arch = ArchSpec::mlp(3, &[4], 3);
        let m = vec![ModelState::zeros(arch.clone()).unwrap(), ModelState::zeros(arch).unwrap()];
        let e = EnsembleView::new(&m).unwrap();
        let x = TensorBuffer::vector(vec![0.2, 0.5, 0.9]);
        let t = OneHot::new(1, 3).unwrap();
        for kind in [LossKind::CrossEntropy, LossKind::Mse] {
            let r = e.report(&x, &t, kind).unwrap();
            assert!(r.grad_bias.data().iter().all(|v| *v == 0.0));
            assert!(r.grad_variance.data().iter().all(|v| *v == 0.0));
            let g = e.objective_grad(&x, &t, Tradeoff::Lambda(1.0), kind).unwrap();
            assert!(g.data().iter().all(|v| *v == 0.0));
        }
    }
}
