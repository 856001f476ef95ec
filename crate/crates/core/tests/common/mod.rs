#![allow(dead_code)]

use decent_bva::data::{LabeledSet, Sample};
use decent_bva::nn::{ArchSpec, Layer, LossKind, ModelState, Sgd};
use decent_bva::seed::client_stream;
use decent_bva::TensorBuffer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Input-space central differences of `f` at `x`.
pub fn input_diff(x: &TensorBuffer, h: f64, mut f: impl FnMut(&TensorBuffer) -> f64) -> Vec<f64> {
    let shape = x.shape().to_vec();
    central_diff(x.data(), h, |d| f(&TensorBuffer::new(shape.clone(), d.to_vec()).unwrap()))
}

/// Outcome of comparing an analytic gradient with a numeric one.
#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

impl GradCheck {
    /// Compares coordinates with `|analytic| > floor` at relative tolerance `tol`.
    pub fn add(&mut self, analytic: &[f64], numeric: &[f64], floor: f64, tol: f64) {
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(numeric) {
            if a.abs() <= floor {
                continue;
            }
            let rel = (a - n).abs() / a.abs().max(n.abs());
            self.checked += 1;
            if rel <= tol {
                self.passed += 1;
            }
            self.worst = self.worst.max(rel);
        }
    }

    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}

/// Random MLP with one or two hidden layers, inputs in `1..=6`, classes in `2..=4`.
pub fn random_mlp(rng: &mut TestRng) -> ArchSpec {
    let inputs = rng.random_range(1..=6);
    let classes = rng.random_range(2..=4);
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=12)).collect();
    ArchSpec::mlp(inputs, &hidden, classes)
}

/// Small convolutional net over `[1, 6, 6]` inputs.
pub fn small_cnn(classes: usize) -> ArchSpec {
    ArchSpec {
        input_shape: vec![1, 6, 6],
        class_count: classes,
        layers: vec![
            Layer::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                stride: 1,
            },
            Layer::Relu,
            Layer::MaxPool { size: 2, stride: 2 },
            Layer::Flatten,
            Layer::Dense {
                inputs: 8,
                outputs: classes,
            },
            Layer::Softmax,
        ],
    }
}

/// `k` independently initialised members of `arch`, with parameters
/// perturbed so members differ noticeably.
pub fn random_ensemble(arch: &ArchSpec, k: usize, rng: &mut TestRng) -> Vec<ModelState> {
    (0..k)
        .map(|_| {
            let mut m = ModelState::init(arch.clone(), rng.random()).unwrap();
            for p in m.params_mut() {
                *p += rng.random_range(-0.3..0.3);
            }
            m
        })
        .collect()
}

/// Uniform point in `[lo, hi]^shape`.
pub fn random_input(shape: &[usize], lo: f64, hi: f64, rng: &mut TestRng) -> TensorBuffer {
    let n = shape.iter().product();
    TensorBuffer::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..=hi)).collect()).unwrap()
}

/// Micro experiment document: 2-class 2-d blobs, `clients` clients.
pub fn micro_config(mode: &str, clients: usize, fraction: f64, rounds: usize, server_size: usize, out: &std::path::Path) -> String {
    format!(
        r#"
master_seed = 11
[dataset]
server_size = {server_size}
[dataset.partition]
num_clients = {clients}
[dataset.synth]
classes = 2
per_class = 40
dims = 2
test_per_class = 20
[model]
input_shape = [2]
class_count = 2
layers = [{{ type = "dense", in = 2, out = 6 }}, {{ type = "relu" }}, {{ type = "dense", in = 6, out = 2 }}, {{ type = "softmax" }}]
[protocol]
mode = "{mode}"
rounds = {rounds}
fraction = {fraction}
batch_size = 8
lr = 0.05
[attack]
epsilon = 0.1
[[eval.attacks]]
kind = "fgsm"
epsilon = 0.1
[[eval.attacks]]
kind = "pgd"
epsilon = 0.1
steps = 10
[output]
dir = "{}"
"#,
        out.display()
    )
}

/// Plain minibatch SGD on `data` for `rounds` x `local_epochs` epochs, drawing
/// each round's shuffles from the stream client 0 would use.
pub fn centralized(cfg: &decent_bva::harness::ExperimentConfig, init: &ModelState, data: &LabeledSet, rounds: usize) -> ModelState {
    let p = &cfg.protocol;
    let sgd = Sgd::new(p.lr, p.momentum);
    let mut model = init.clone();
    let mut velocity = vec![0.0; model.param_count()];
    for round in 1..=rounds {
        if !p.persist_momentum {
            velocity.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = client_stream(cfg.master_seed, round, 0);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..p.local_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(p.batch_size) {
                let batch: Vec<Sample<'_>> = chunk.iter().map(|&i| data.sample(i)).collect();
                let g = model.grad_params(&batch, LossKind::CrossEntropy, decent_bva::nn::Mode::Eval).unwrap();
                sgd.step(&mut model, &g, &mut velocity).unwrap();
            }
        }
    }
    model
}
