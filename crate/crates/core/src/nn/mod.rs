//! Feed-forward networks with explicit reverse-mode rules per layer.
//!
//! Supports dense, 2-d convolution, max-pool, ReLU, dropout and flatten
//! layers ending in a softmax. Gradients are available with respect to the
//! parameters (training) and the input (attacks), the latter either of the
//! loss or of every output probability.

mod arch;
mod checkpoint;
mod loss;
mod model;
mod optim;

pub use arch::{ArchSpec, Layer};
pub use checkpoint::{decode_model, encode_model, MODEL_MAGIC};
pub use loss::{entropy, floored_ln, loss, LossKind, OneHot, Prediction, LOG_FLOOR};
pub use model::{InputGradient, Mode, ModelState, ParamGradient};
pub use optim::Sgd;
