use std::sync::Arc;

use rand::seq::index;
use rayon::prelude::*;

use super::client::ClientState;
use super::plan::RoundPlan;
use super::{Downlink, Uplink};
use crate::attacks::{attack_set, AttackTarget, PerturbedSet};
use crate::bv::EnsembleView;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{decode_model, encode_model, ArchSpec, LossKind, ModelState};
use crate::seed::{self, purpose, Stream};

/// Server-side protocol state.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_model: ModelState,
    /// Clean server set, drawn once and never modified.
    pub server_set: LabeledSet,
    /// Perturbed server set produced at the end of the last round.
    pub perturbed_set: PerturbedSet,
    pub round: usize,
}

impl ServerState {
    pub fn new(global_model: ModelState, server_set: LabeledSet) -> Self {
        let classes = server_set.classes();
        Self {
            global_model,
            server_set,
            perturbed_set: PerturbedSet::empty(classes),
            round: 0,
        }
    }
}

/// Per-round telemetry of the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    pub sampled: Vec<usize>,
    pub mean_train_loss: Option<f64>,
    /// Mean bias/variance of the returned client ensemble on the clean server set.
    pub mean_bias: Option<f64>,
    pub mean_variance: Option<f64>,
    pub perturbed: usize,
}

/// Protocol steps, reported in the order they happen.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundEvent {
    ClientUpdate { client: usize, received_perturbed: usize },
    ServerAttack { members: usize, produced: usize },
    Aggregate { updates: usize },
}

pub trait RoundObserver {
    fn on_event(&mut self, round: usize, event: &RoundEvent);
}

impl RoundObserver for () {
    fn on_event(&mut self, _: usize, _: &RoundEvent) {}
}

impl RoundObserver for Vec<(usize, RoundEvent)> {
    fn on_event(&mut self, round: usize, event: &RoundEvent) {
        self.push((round, event.clone()));
    }
}

/// `max(floor(F * K), 1)` distinct client ids drawn uniformly without
/// replacement, in ascending order.
pub fn sample_clients(plan: &RoundPlan, rng: &mut Stream) -> Vec<usize> {
    let mut ids = index::sample(rng, plan.total_clients, plan.sampled_count()).into_vec();
    ids.sort_unstable();
    ids
}

/// Parameter-wise mean weighted by each update's example count.
pub fn aggregate(updates: &[(&ModelState, usize)]) -> Result<ModelState> {
    let (first, _) = updates.first().ok_or(Error::Empty("update list"))?;
    if let Some((m, _)) = updates.iter().find(|(m, _)| !m.same_arch(first)) {
        return Err(Error::ShapeMismatch {
            expected: vec![first.param_count()],
            found: vec![m.param_count()],
        });
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Empty("aggregation weights"));
    }
    let mut acc = vec![0.0; first.param_count()];
    for (model, n) in updates {
        let w = *n as f64 / total as f64;
        for (a, p) in acc.iter_mut().zip(model.params()) {
            *a += w * p;
        }
    }
    first.with_params(acc)
}

/// Executes one communication round.
///
/// Clients train against the perturbed set left by the previous round; the
/// server then attacks its clean set using the models returned this round
/// and finally averages them. Under the baseline mode the attack instead
/// targets the freshly aggregated model, so it runs after aggregation.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    plan: &RoundPlan,
    master_seed: u64,
    observer: &mut dyn RoundObserver,
) -> Result<RoundStats> {
    plan.validate()?;
    if clients.len() != plan.total_clients || clients.iter().enumerate().any(|(i, c)| c.id != i) {
        return Err(Error::Plan(format!(
            "expected clients with ids 0..{}, got {} clients",
            plan.total_clients,
            clients.len()
        )));
    }
    let round = server.round + 1;
    let sampled = sample_clients(plan, &mut seed::stream(master_seed, &[purpose::SAMPLING, round as u64]));

    let downlink = Downlink {
        global: Arc::new(server.global_model.clone()),
        perturbed: Arc::new(server.perturbed_set.clone()),
    };
    let received = downlink.perturbed.len();
    let replies: Vec<(Uplink, Option<f64>)> = clients
        .par_iter_mut()
        .filter(|c| sampled.binary_search(&c.id).is_ok())
        .map(|c| {
            let mut rng = seed::client_stream(master_seed, round, c.id);
            c.respond(&downlink, plan, &mut rng).map_err(|e| Error::Client {
                round,
                client: c.id,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    for (up, _) in &replies {
        observer.on_event(
            round,
            &RoundEvent::ClientUpdate {
                client: up.client,
                received_perturbed: received,
            },
        );
    }

    let models: Vec<ModelState> = replies.iter().map(|(u, _)| u.model.clone()).collect();
    let weights: Vec<(&ModelState, usize)> = replies.iter().map(|(u, _)| (&u.model, u.sample_count)).collect();
    let attack_seed = seed::derive(master_seed, &[purpose::SERVER_ATTACK, round as u64]);
    let ensemble = EnsembleView::new(&models)?;
    let attack = plan.server_attack();

    let (global, perturbed) = match &attack {
        Some(cfg) if plan.mode.uses_ensemble_attack() => {
            let perturbed = attack_set(AttackTarget::Ensemble(ensemble), &server.server_set, cfg, round, attack_seed)?;
            observer.on_event(
                round,
                &RoundEvent::ServerAttack {
                    members: models.len(),
                    produced: perturbed.len(),
                },
            );
            let global = aggregate(&weights)?;
            observer.on_event(round, &RoundEvent::Aggregate { updates: weights.len() });
            (global, perturbed)
        }
        Some(cfg) => {
            let global = aggregate(&weights)?;
            observer.on_event(round, &RoundEvent::Aggregate { updates: weights.len() });
            let perturbed = attack_set(AttackTarget::Model(&global), &server.server_set, cfg, round, attack_seed)?;
            observer.on_event(
                round,
                &RoundEvent::ServerAttack {
                    members: 1,
                    produced: perturbed.len(),
                },
            );
            (global, perturbed)
        }
        None => {
            let global = aggregate(&weights)?;
            observer.on_event(round, &RoundEvent::Aggregate { updates: weights.len() });
            (global, PerturbedSet::empty(server.server_set.classes()))
        }
    };

    let losses: Vec<f64> = replies.iter().filter_map(|(_, l)| *l).collect();
    let mean_train_loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
    let (mean_bias, mean_variance) = ensemble_stats(&ensemble, &server.server_set, plan.loss)?;

    server.global_model = global;
    server.perturbed_set = perturbed;
    server.round = round;
    Ok(RoundStats {
        round,
        sampled,
        mean_train_loss,
        mean_bias,
        mean_variance,
        perturbed: server.perturbed_set.len(),
    })
}

/// Mean bias and variance of `ensemble` over `set`; variance is `None` when
/// it is undefined (squared error with a single member).
fn ensemble_stats(ensemble: &EnsembleView<'_>, set: &LabeledSet, kind: LossKind) -> Result<(Option<f64>, Option<f64>)> {
    if set.is_empty() {
        return Ok((None, None));
    }
    let with_variance = kind == LossKind::CrossEntropy || ensemble.len() >= 2;
    let per_example: Vec<(f64, f64)> = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let x = &set.features()[i];
            let b = ensemble.bias(x, &set.target(i), kind)?;
            let v = if with_variance { ensemble.variance(x, kind)? } else { 0.0 };
            Ok((b, v))
        })
        .collect::<Result<_>>()?;
    let n = per_example.len() as f64;
    let bias = per_example.iter().map(|p| p.0).sum::<f64>() / n;
    let variance = per_example.iter().map(|p| p.1).sum::<f64>() / n;
    Ok((Some(bias), with_variance.then_some(variance)))
}

pub const SERVER_MAGIC: [u8; 4] = *b"DBVS";

/// Server checkpoint: magic `"DBVS"`, round as u64 LE, then the model blob.
pub fn encode_server(state: &ServerState) -> Vec<u8> {
    let mut out = SERVER_MAGIC.to_vec();
    out.extend_from_slice(&(state.round as u64).to_le_bytes());
    out.extend(encode_model(&state.global_model));
    out
}

/// Decodes a server checkpoint, or a bare model blob (reported as round 0).
pub fn decode_server(bytes: &[u8], arch: ArchSpec) -> Result<(ModelState, usize)> {
    if bytes.len() >= 12 && bytes[..4] == SERVER_MAGIC {
        let round = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let (model, _) = decode_model(&bytes[12..], arch)?;
        return Ok((model, round));
    }
    decode_model(bytes, arch).map(|(m, _)| (m, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackConfig, AttackKind};
    use crate::federation::Mode;
    use crate::nn::ArchSpec;

    fn model(params: Vec<f64>) -> ModelState {
        ModelState::new(ArchSpec::mlp(1, &[], 2), params).unwrap()
    }

    #[test]
    fn equal_weight_mean() {
        let a = model(vec![1.0, 3.0, 0.0, 0.0]);
        let b = model(vec![3.0, 5.0, 0.0, 0.0]);
        let g = aggregate(&[(&a, 10), (&b, 10)]).unwrap();
        assert_eq!(&g.params()[..2], &[2.0, 4.0]);
    }

    #[test]
    fn weighted_mean_and_identity() {
        let a = model(vec![1.0, -2.0, 0.5, 8.0]);
        let b = model(vec![5.0, 2.0, -0.5, 0.0]);
        let g = aggregate(&[(&a, 1), (&b, 3)]).unwrap();
        for i in 0..4 {
            let expected = (a.params()[i] + 3.0 * b.params()[i]) / 4.0;
            assert!((g.params()[i] - expected).abs() < 1e-15);
        }
        assert_eq!(aggregate(&[(&a, 7)]).unwrap(), a);
    }

    #[test]
    fn aggregation_errors() {
        assert!(aggregate(&[]).is_err());
        let a = model(vec![0.0; 4]);
        let c = ModelState::zeros(ArchSpec::mlp(2, &[], 2)).unwrap();
        assert!(aggregate(&[(&a, 1), (&c, 1)]).is_err());
    }

    #[test]
    fn sampling_is_seeded_and_distinct() {
        let plan = RoundPlan::new(Mode::Fedavg, 100, AttackConfig::new(AttackKind::BvFgsm, 0.3));
        let a = sample_clients(&plan, &mut seed::stream(1, &[3]));
        let b = sample_clients(&plan, &mut seed::stream(1, &[3]));
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&i| i < 100));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(vec![0.25, -0.5, 1.0, 2.0]);
        let mut state = ServerState::new(m.clone(), LabeledSet::empty(2));
        state.round = 12;
        let bytes = encode_server(&state);
        assert_eq!(&bytes[..4], b"DBVS");
        let (back, round) = decode_server(&bytes, m.arch().clone()).unwrap();
        assert_eq!(round, 12);
        assert_eq!(back, m);
        let (bare, round) = decode_server(&encode_model(&m), m.arch().clone()).unwrap();
        assert_eq!((bare, round), (m, 0));
    }
}
