//! Federated learning with server-side adversarial example generation driven
//! by a bias-variance decomposition of the sampled client ensemble.
//!
//! The crate is organised bottom up:
//!
//! * [`nn`]: dense/convolutional classifiers with softmax outputs, parameter
//!   and input gradients, SGD with momentum, and checkpoints.
//! * [`bv`]: bias, variance and their input gradients for an ensemble under
//!   cross-entropy or squared loss.
//! * [`attacks`]: FGSM, PGD and their bias-variance counterparts.
//! * [`data`]: labeled sets, IDX/CSV loaders, synthetic blobs and client
//!   partitioning.
//! * [`federation`]: client updates, the server attack and aggregation.
//! * [`harness`]: TOML experiment configs, evaluation, sweeps and metrics.

pub mod attacks;
pub mod bv;
pub mod data;
mod error;
pub mod federation;
pub mod harness;
pub mod nn;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::TensorBuffer;
