//! Drives the protocol by hand: builds clients and a server from a partition,
//! runs rounds with an observer that prints every event, and reports the
//! size of the perturbed set the server broadcasts.
//!
//! cargo run --example round_loop

use decent_bva::attacks::{AttackConfig, AttackKind};
use decent_bva::data::{partition, synth_blobs, BlobSpec, PartitionSpec};
use decent_bva::federation::{run_round, ClientState, Mode, RoundEvent, RoundObserver, RoundPlan, ServerState};
use decent_bva::nn::{ArchSpec, ModelState};

struct Printer;

impl RoundObserver for Printer {
    fn on_event(&mut self, round: usize, event: &RoundEvent) {
        println!("  [{round}] {event:?}");
    }
}

fn main() -> decent_bva::Result<()> {
    let set = synth_blobs(
        &BlobSpec {
            classes: 3,
            per_class: 50,
            dims: 2,
            spread: 0.1,
        },
        0,
    )?;
    let parts = partition(&set, &PartitionSpec::iid(6, 1), 24)?;
    let model = ModelState::init(ArchSpec::mlp(2, &[12], 3), 2)?;
    let mut clients: Vec<ClientState> = parts
        .clients
        .into_iter()
        .enumerate()
        .map(|(i, s)| ClientState::new(i, s, model.clone()))
        .collect::<Result<_, _>>()?;
    let mut server = ServerState::new(model, parts.server);

    let mut plan = RoundPlan::new(Mode::DecentBva, clients.len(), AttackConfig::new(AttackKind::BvFgsm, 0.1));
    plan.fraction = 0.5;
    plan.batch_size = 16;
    plan.lr = 0.05;

    for _ in 0..3 {
        let stats = run_round(&mut server, &mut clients, &plan, 7, &mut Printer)?;
        println!(
            "round {}: sampled {:?}, train loss {:.4}, bias {:.4}, variance {:.4}, perturbed set {}",
            stats.round,
            stats.sampled,
            stats.mean_train_loss.unwrap_or(f64::NAN),
            stats.mean_bias.unwrap_or(f64::NAN),
            stats.mean_variance.unwrap_or(f64::NAN),
            server.perturbed_set.len()
        );
    }
    Ok(())
}
