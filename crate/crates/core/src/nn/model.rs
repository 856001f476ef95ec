use std::sync::Arc;

use rand::{Rng, SeedableRng};

use super::arch::{ArchSpec, Layer};
use super::loss::{loss, loss_grad_probs, LossKind, OneHot, Prediction};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::seed::Stream;
use crate::tensor::TensorBuffer;

/// Whether a forward pass runs with dropout active.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Stream),
}

#[derive(Debug)]
struct Compiled {
    arch: ArchSpec,
    /// Shape entering each layer, plus the output shape at the end.
    shapes: Vec<Vec<usize>>,
    /// Offset of each layer's parameters in the flat vector.
    offsets: Vec<usize>,
    param_count: usize,
}

impl Compiled {
    fn new(arch: ArchSpec) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut offsets = Vec::with_capacity(arch.layers.len());
        let mut total = 0;
        for layer in &arch.layers {
            offsets.push(total);
            total += layer.param_count();
        }
        Ok(Self {
            arch,
            shapes,
            offsets,
            param_count: total,
        })
    }
}

/// Parameters of one network together with its architecture.
///
/// Parameters are laid out layer by layer; within a layer the weights come
/// first (row-major, `[out][in]` for dense and `[out_ch][in_ch][ky][kx]` for
/// convolutions) followed by the biases.
#[derive(Debug, Clone)]
pub struct ModelState {
    net: Arc<Compiled>,
    params: Vec<f64>,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.net.arch == other.net.arch && self.params == other.params
    }
}

/// Gradient of the mean batch loss with respect to the parameters.
#[derive(Debug, Clone)]
pub struct ParamGradient {
    pub grad: Vec<f64>,
    pub loss: f64,
}

/// Gradient of one example's loss with respect to the input.
#[derive(Debug, Clone)]
pub struct InputGradient {
    pub grad: TensorBuffer,
    pub loss: f64,
}

/// Activations recorded during a forward pass, consumed by the backward pass.
struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Dropout scale masks and max-pool argmax indices, per layer.
    masks: Vec<Option<Vec<f64>>>,
    argmax: Vec<Option<Vec<usize>>>,
    probs: Vec<f64>,
}

impl ModelState {
    pub fn new(arch: ArchSpec, params: Vec<f64>) -> Result<Self> {
        let net = Compiled::new(arch)?;
        if params.len() != net.param_count {
            return Err(Error::ParamCount {
                expected: net.param_count,
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NumericOverflow("parameter vector"));
        }
        Ok(Self {
            net: Arc::new(net),
            params,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        let net = Compiled::new(arch)?;
        let mut rng = Stream::seed_from_u64(seed);
        let mut params = vec![0.0; net.param_count];
        for (layer, &offset) in net.arch.layers.iter().zip(&net.offsets) {
            if let Some((fan_in, fan_out, weights, _)) = layer.param_dims() {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in &mut params[offset..offset + weights] {
                    *w = rng.random_range(-bound..bound);
                }
            }
        }
        Ok(Self {
            net: Arc::new(net),
            params,
        })
    }

    pub fn zeros(arch: ArchSpec) -> Result<Self> {
        let count = arch.param_count();
        Self::new(arch, vec![0.0; count])
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.net.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count
    }

    pub fn class_count(&self) -> usize {
        self.net.arch.class_count
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.net.arch.input_shape
    }

    /// Copy of this model with a different parameter vector.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.net.param_count {
            return Err(Error::ParamCount {
                expected: self.net.param_count,
                found: params.len(),
            });
        }
        Ok(Self {
            net: Arc::clone(&self.net),
            params,
        })
    }

    pub fn same_arch(&self, other: &ModelState) -> bool {
        Arc::ptr_eq(&self.net, &other.net) || self.net.arch == other.net.arch
    }

    pub fn forward(&self, x: &TensorBuffer, mode: Mode<'_>) -> Result<Prediction> {
        let trace = self.trace(x, mode)?;
        Ok(Prediction { probs: trace.probs })
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, x: &TensorBuffer) -> Result<Prediction> {
        self.forward(x, Mode::Eval)
    }

    /// Gradient of the mean loss over `batch` with respect to the parameters.
    pub fn grad_params(
        &self,
        batch: &[Sample<'_>],
        kind: LossKind,
        mut mode: Mode<'_>,
    ) -> Result<ParamGradient> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let classes = self.class_count();
        let mut grad = vec![0.0; self.net.param_count];
        let mut total = 0.0;
        for sample in batch {
            let target = OneHot::new(sample.label, classes)?;
            let sub_mode = match &mut mode {
                Mode::Eval => Mode::Eval,
                Mode::Train(rng) => Mode::Train(rng),
            };
            let trace = self.trace(sample.x, sub_mode)?;
            total += loss(&Prediction { probs: trace.probs.clone() }, &target, kind)?;
            let dprobs = loss_grad_probs(&trace.probs, &target, kind)?;
            self.backward(&trace, &dprobs, Some(&mut grad));
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericOverflow("parameter gradient"));
        }
        Ok(ParamGradient {
            grad,
            loss: total / n,
        })
    }

    /// Gradient of `loss(f(x), target)` with respect to `x`, dropout off.
    pub fn grad_input(
        &self,
        x: &TensorBuffer,
        target: &OneHot,
        kind: LossKind,
    ) -> Result<InputGradient> {
        let trace = self.trace(x, Mode::Eval)?;
        let value = loss(&Prediction { probs: trace.probs.clone() }, target, kind)?;
        let dprobs = loss_grad_probs(&trace.probs, target, kind)?;
        let dx = self.backward(&trace, &dprobs, None);
        let grad = TensorBuffer::new(x.shape().to_vec(), dx)?;
        if !grad.is_finite() {
            return Err(Error::NumericOverflow("input gradient"));
        }
        Ok(InputGradient { grad, loss: value })
    }

    /// Input gradient of each output probability, dropout off.
    pub fn grad_input_prediction(&self, x: &TensorBuffer) -> Result<(Prediction, Vec<TensorBuffer>)> {
        let trace = self.trace(x, Mode::Eval)?;
        let classes = self.class_count();
        let mut grads = Vec::with_capacity(classes);
        let mut seed = vec![0.0; classes];
        for j in 0..classes {
            seed[j] = 1.0;
            let dx = self.backward(&trace, &seed, None);
            seed[j] = 0.0;
            let g = TensorBuffer::new(x.shape().to_vec(), dx)?;
            if !g.is_finite() {
                return Err(Error::NumericOverflow("prediction gradient"));
            }
            grads.push(g);
        }
        Ok((Prediction { probs: trace.probs }, grads))
    }

    fn trace(&self, x: &TensorBuffer, mut mode: Mode<'_>) -> Result<Trace> {
        let net = &*self.net;
        x.check_shape(&net.arch.input_shape)?;
        let n = net.arch.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        let mut act = x.data().to_vec();
        for (i, layer) in net.arch.layers.iter().enumerate() {
            let in_shape = &net.shapes[i];
            let p = &self.params[net.offsets[i]..net.offsets[i] + layer.param_count()];
            let mut mask = None;
            let mut arg = None;
            let out = match *layer {
                Layer::Dense { inputs: ni, outputs } => dense_forward(p, &act, ni, outputs),
                Layer::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => conv_forward(p, &act, in_shape, &net.shapes[i + 1], out_channels, kernel, stride),
                Layer::MaxPool { size, stride } => {
                    let (out, idx) = pool_forward(&act, in_shape, &net.shapes[i + 1], size, stride);
                    arg = Some(idx);
                    out
                }
                Layer::Relu => act.iter().map(|v| v.max(0.0)).collect(),
                Layer::Dropout { rate } => match &mut mode {
                    Mode::Train(rng) if rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let m: Vec<f64> = act
                            .iter()
                            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                            .collect();
                        let out = act.iter().zip(&m).map(|(a, s)| a * s).collect();
                        mask = Some(m);
                        out
                    }
                    _ => act.clone(),
                },
                Layer::Flatten => act.clone(),
                Layer::Softmax => {
                    if act.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NumericOverflow("logits"));
                    }
                    softmax(&act)
                }
            };
            inputs.push(std::mem::replace(&mut act, out));
            masks.push(mask);
            argmax.push(arg);
        }
        if act.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("forward pass"));
        }
        Ok(Trace {
            inputs,
            masks,
            argmax,
            probs: act,
        })
    }

    /// Propagates `dprobs` (gradient w.r.t. the output probabilities) back to
    /// the input, accumulating parameter gradients when `param_grad` is given.
    fn backward(&self, trace: &Trace, dprobs: &[f64], mut param_grad: Option<&mut Vec<f64>>) -> Vec<f64> {
        let net = &*self.net;
        let mut grad = dprobs.to_vec();
        for (i, layer) in net.arch.layers.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            let offset = net.offsets[i];
            let count = layer.param_count();
            let p = &self.params[offset..offset + count];
            let pg = param_grad.as_deref_mut().map(|g| &mut g[offset..offset + count]);
            grad = match *layer {
                Layer::Softmax => {
                    let probs = &trace.probs;
                    let dot: f64 = probs.iter().zip(&grad).map(|(p, g)| p * g).sum();
                    probs.iter().zip(&grad).map(|(p, g)| p * (g - dot)).collect()
                }
                Layer::Dense { inputs, outputs } => dense_backward(p, pg, input, &grad, inputs, outputs),
                Layer::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => conv_backward(
                    p,
                    pg,
                    input,
                    &grad,
                    &net.shapes[i],
                    &net.shapes[i + 1],
                    out_channels,
                    kernel,
                    stride,
                ),
                Layer::MaxPool { .. } => {
                    let idx = trace.argmax[i].as_ref().expect("pool trace");
                    let mut dx = vec![0.0; input.len()];
                    for (g, &k) in grad.iter().zip(idx) {
                        dx[k] += g;
                    }
                    dx
                }
                Layer::Relu => input
                    .iter()
                    .zip(&grad)
                    .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
                Layer::Dropout { .. } => match &trace.masks[i] {
                    Some(m) => grad.iter().zip(m).map(|(g, s)| g * s).collect(),
                    None => grad,
                },
                Layer::Flatten => grad,
            };
        }
        grad
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn dense_forward(p: &[f64], x: &[f64], inputs: usize, outputs: usize) -> Vec<f64> {
    let (w, b) = p.split_at(inputs * outputs);
    (0..outputs)
        .map(|o| {
            let row = &w[o * inputs..(o + 1) * inputs];
            b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

fn dense_backward(
    p: &[f64],
    pg: Option<&mut [f64]>,
    x: &[f64],
    dy: &[f64],
    inputs: usize,
    outputs: usize,
) -> Vec<f64> {
    let w = &p[..inputs * outputs];
    if let Some(pg) = pg {
        let (gw, gb) = pg.split_at_mut(inputs * outputs);
        for o in 0..outputs {
            gb[o] += dy[o];
            for (g, xi) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                *g += dy[o] * xi;
            }
        }
    }
    let mut dx = vec![0.0; inputs];
    for o in 0..outputs {
        for (d, wi) in dx.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
            *d += wi * dy[o];
        }
    }
    dx
}

fn conv_forward(
    p: &[f64],
    x: &[f64],
    in_shape: &[usize],
    out_shape: &[usize],
    out_channels: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (weights, bias) = p.split_at(out_channels * c * kernel * kernel);
    let mut out = vec![0.0; out_channels * oh * ow];
    for oc in 0..out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..c {
                    for ky in 0..kernel {
                        let row = (ic * h + oy * stride + ky) * w + ox * stride;
                        let wrow = ((oc * c + ic) * kernel + ky) * kernel;
                        for kx in 0..kernel {
                            acc += weights[wrow + kx] * x[row + kx];
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    p: &[f64],
    mut pg: Option<&mut [f64]>,
    x: &[f64],
    dy: &[f64],
    in_shape: &[usize],
    out_shape: &[usize],
    out_channels: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let weight_count = out_channels * c * kernel * kernel;
    let weights = &p[..weight_count];
    let mut dx = vec![0.0; x.len()];
    for oc in 0..out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dy[(oc * oh + oy) * ow + ox];
                if let Some(pg) = pg.as_deref_mut() {
                    pg[weight_count + oc] += g;
                }
                if g == 0.0 {
                    continue;
                }
                for ic in 0..c {
                    for ky in 0..kernel {
                        let row = (ic * h + oy * stride + ky) * w + ox * stride;
                        let wrow = ((oc * c + ic) * kernel + ky) * kernel;
                        for kx in 0..kernel {
                            dx[row + kx] += weights[wrow + kx] * g;
                            if let Some(pg) = pg.as_deref_mut() {
                                pg[wrow + kx] += x[row + kx] * g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

fn pool_forward(
    x: &[f64],
    in_shape: &[usize],
    out_shape: &[usize],
    size: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (usize::MAX, f64::NEG_INFINITY);
                for ky in 0..size {
                    for kx in 0..size {
                        let k = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                        if x[k] > best.1 || best.0 == usize::MAX {
                            best = (k, x[k]);
                        }
                    }
                }
                idx.push(best.0);
                out.push(best.1);
            }
        }
    }
    (out, idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_dense_identity() -> ModelState {
        let arch = ArchSpec::mlp(2, &[], 2);
        ModelState::new(arch, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let arch = ArchSpec::mlp(2, &[], 2);
        let a = ModelState::init(arch.clone(), 7).unwrap();
        let b = ModelState::init(arch, 7).unwrap();
        assert_eq!(a.params(), b.params());
        // biases stay zero
        assert_eq!(&a.params()[4..], &[0.0, 0.0]);
    }

    #[test]
    fn glorot_bounds() {
        let arch = ArchSpec::mlp(30, &[20], 10);
        let m = ModelState::init(arch, 1).unwrap();
        let b1 = (6.0f64 / 50.0).sqrt();
        assert!(m.params()[..600].iter().all(|w| w.abs() <= b1));
        assert!(m.params()[..600].iter().any(|w| w.abs() > b1 * 0.9));
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = ModelState::zeros(ArchSpec::mlp(3, &[4], 5)).unwrap();
        let p = m.predict(&TensorBuffer::vector(vec![0.3, 0.9, 0.1])).unwrap();
        for v in p.probs {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_dense_softmax() {
        let p = single_dense_identity()
            .predict(&TensorBuffer::vector(vec![2.0, 0.0]))
            .unwrap();
        assert!((p.probs[0] - 0.880_797_077_977_882_4).abs() < 1e-12);
        assert!((p.probs[1] - 0.119_202_922_022_117_6).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = single_dense_identity();
        assert!(matches!(
            m.predict(&TensorBuffer::vector(vec![1.0; 3])),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn overflow_detected() {
        let m = ModelState::new(ArchSpec::mlp(2, &[], 2), vec![1e308, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            m.predict(&TensorBuffer::vector(vec![10.0, 0.0])),
            Err(Error::NumericOverflow(_))
        ));
    }

    #[test]
    fn eval_ignores_dropout_train_applies_it() {
        let mut arch = ArchSpec::mlp(4, &[16], 3);
        arch.layers.insert(2, Layer::Dropout { rate: 0.5 });
        let m = ModelState::init(arch, 3).unwrap();
        let x = TensorBuffer::vector(vec![0.1, 0.7, 0.3, 0.9]);
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
        let mut rng = Stream::seed_from_u64(0);
        let trained = m.forward(&x, Mode::Train(&mut rng)).unwrap();
        assert_ne!(trained, m.predict(&x).unwrap());
        assert!((trained.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let m = single_dense_identity();
        assert!(matches!(
            m.grad_params(&[], LossKind::CrossEntropy, Mode::Eval),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn linear_softmax_input_gradient_closed_form() {
        // For p = softmax(Wx + b) under cross-entropy, dL/dx = W^T (p - t).
        let w = [0.5, -1.0, 0.25, 2.0, 0.0, -0.75];
        let mut params = w.to_vec();
        params.extend([0.1, -0.2]);
        let m = ModelState::new(ArchSpec::mlp(3, &[], 2), params).unwrap();
        let x = TensorBuffer::vector(vec![0.2, 0.4, 0.6]);
        let t = OneHot::new(1, 2).unwrap();
        let p = m.predict(&x).unwrap().probs;
        let r = [p[0], p[1] - 1.0];
        let g = m.grad_input(&x, &t, LossKind::CrossEntropy).unwrap().grad;
        for i in 0..3 {
            let expected = w[i] * r[0] + w[3 + i] * r[1];
            assert!((g.data()[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_model_has_no_input_gradient() {
        let m = ModelState::zeros(ArchSpec::mlp(3, &[4], 3)).unwrap();
        let x = TensorBuffer::vector(vec![0.1, 0.2, 0.3]);
        let g = m.grad_input(&x, &OneHot::new(2, 3).unwrap(), LossKind::CrossEntropy).unwrap();
        assert!(g.grad.data().iter().all(|v| *v == 0.0));
        let (_, per_class) = m.grad_input_prediction(&x).unwrap();
        assert_eq!(per_class.len(), 3);
        assert!(per_class.iter().all(|t| t.data().iter().all(|v| *v == 0.0)));
    }
}
