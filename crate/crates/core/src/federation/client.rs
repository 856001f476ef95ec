use rand::seq::SliceRandom;

use super::plan::RoundPlan;
use super::{Downlink, Uplink};
use crate::attacks::{fgsm, PerturbedSet};
use crate::data::{LabeledSet, Sample};
use crate::error::{Error, Result};
use crate::nn::{Mode, ModelState, Sgd};
use crate::seed::Stream;
use crate::tensor::TensorBuffer;

/// One client: its private shard, latest local model and momentum buffer.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub local_set: LabeledSet,
    pub model: ModelState,
    pub velocity: Vec<f64>,
}

/// Result of local training.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub model: ModelState,
    /// Mean batch loss over the last local epoch, if any epoch ran.
    pub train_loss: Option<f64>,
}

impl ClientState {
    pub fn new(id: usize, local_set: LabeledSet, model: ModelState) -> Result<Self> {
        if local_set.is_empty() {
            return Err(Error::Empty("client shard"));
        }
        let velocity = vec![0.0; model.param_count()];
        Ok(Self {
            id,
            local_set,
            model,
            velocity,
        })
    }

    /// Trains on a downlink message and produces the reply. The training
    /// loss is simulator telemetry and not part of the message.
    pub fn respond(&mut self, downlink: &Downlink, plan: &RoundPlan, rng: &mut Stream) -> Result<(Uplink, Option<f64>)> {
        let update = if plan.mode.robust_local() {
            client_update_robust_local(self, &downlink.global, &downlink.perturbed, plan, rng)?
        } else {
            client_update(self, &downlink.global, &downlink.perturbed, plan, rng)?
        };
        let uplink = Uplink {
            client: self.id,
            model: update.model,
            sample_count: self.local_set.len(),
        };
        Ok((uplink, update.train_loss))
    }
}

/// Local momentum SGD over the client's shard joined with the received
/// perturbed examples, starting from the global parameters.
pub fn client_update(
    client: &mut ClientState,
    global: &ModelState,
    perturbed: &PerturbedSet,
    plan: &RoundPlan,
    rng: &mut Stream,
) -> Result<LocalUpdate> {
    train_locally(client, global, perturbed, plan, false, rng)
}

/// Like [`client_update`], but every clean local example in a batch is first
/// replaced by its FGSM counterpart against the current local model.
pub fn client_update_robust_local(
    client: &mut ClientState,
    global: &ModelState,
    perturbed: &PerturbedSet,
    plan: &RoundPlan,
    rng: &mut Stream,
) -> Result<LocalUpdate> {
    train_locally(client, global, perturbed, plan, true, rng)
}

fn train_locally(
    client: &mut ClientState,
    global: &ModelState,
    perturbed: &PerturbedSet,
    plan: &RoundPlan,
    robust: bool,
    rng: &mut Stream,
) -> Result<LocalUpdate> {
    if !global.same_arch(&client.model) {
        return Err(Error::Plan(format!("client {} architecture differs from the global model", client.id)));
    }
    let local = &client.local_set;
    let extra = &perturbed.examples;
    let total = local.len() + extra.len();
    if total == 0 {
        return Err(Error::Empty("client training set"));
    }
    let mut model = global.clone();
    if !plan.persist_momentum || client.velocity.len() != model.param_count() {
        client.velocity = vec![0.0; model.param_count()];
    }
    let sgd = Sgd::new(plan.lr, plan.momentum);
    let ball = plan.attack.ball();
    let sample = |i: usize| {
        if i < local.len() {
            local.sample(i)
        } else {
            extra.sample(i - local.len())
        }
    };

    let mut order: Vec<usize> = (0..total).collect();
    let mut last_epoch_loss = None;
    for _ in 0..plan.local_epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(plan.batch_size) {
            let adversarial: Vec<Option<TensorBuffer>> = if robust {
                chunk
                    .iter()
                    .map(|&i| {
                        (i < local.len())
                            .then(|| fgsm(&model, &local.features()[i], &local.target(i), ball, plan.loss))
                            .transpose()
                    })
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let batch: Vec<Sample<'_>> = chunk
                .iter()
                .enumerate()
                .map(|(pos, &i)| match adversarial.get(pos) {
                    Some(Some(x)) => Sample {
                        x,
                        label: local.labels()[i],
                    },
                    _ => sample(i),
                })
                .collect();
            let grad = model.grad_params(&batch, plan.loss, Mode::Train(rng))?;
            sgd.step(&mut model, &grad, &mut client.velocity)?;
            loss_sum += grad.loss;
            batches += 1;
        }
        last_epoch_loss = Some(loss_sum / batches as f64);
    }
    client.model = model.clone();
    Ok(LocalUpdate {
        model,
        train_loss: last_epoch_loss,
    })
}
