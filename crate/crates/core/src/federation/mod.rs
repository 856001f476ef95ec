//! The federated protocol: client sampling, local training, the server-side
//! attack on the sampled ensemble, and weighted parameter averaging.
//!
//! Each round the server broadcasts a [`Downlink`] (global parameters plus the
//! perturbed server set from the previous round) to the sampled clients. Each
//! client trains locally on its private shard together with the received
//! perturbed examples and answers with an [`Uplink`] holding only its new
//! parameters and example count. The server then perturbs its clean set
//! against the returned models and aggregates them into the next global
//! model.

mod client;
mod plan;
mod server;

pub use client::{client_update, client_update_robust_local, ClientState, LocalUpdate};
pub use plan::{Mode, RoundPlan};
pub use server::{
    aggregate, decode_server, encode_server, run_round, sample_clients, RoundEvent, RoundObserver, RoundStats,
    ServerState, SERVER_MAGIC,
};

use std::sync::Arc;

use crate::attacks::PerturbedSet;
use crate::nn::ModelState;

/// Server-to-client message.
#[derive(Debug, Clone)]
pub struct Downlink {
    pub global: Arc<ModelState>,
    pub perturbed: Arc<PerturbedSet>,
}

/// Client-to-server message.
#[derive(Debug, Clone)]
pub struct Uplink {
    pub client: usize,
    pub model: ModelState,
    /// Size of the client's private shard, the aggregation weight.
    pub sample_count: usize,
}
