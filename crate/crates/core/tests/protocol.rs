mod common;

use std::path::Path;

use common::{centralized, micro_config};
use decent_bva::federation::{Mode, RoundEvent};
use decent_bva::harness::{run_experiment, validate_config, ExperimentConfig, Simulation};
use decent_bva::nn::{ArchSpec, ModelState};
use decent_bva::Error;

fn config(mode: &str, clients: usize, fraction: f64, rounds: usize, server_size: usize, out: &Path) -> ExperimentConfig {
    validate_config(&micro_config(mode, clients, fraction, rounds, server_size, out), Path::new(".")).unwrap()
}

#[test]
fn every_mode_completes_a_micro_run() {
    for mode in Mode::ALL {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&config(mode.name(), 4, 0.5, 2, 8, dir.path())).unwrap();
        let rounds: Vec<_> = summary.records.iter().map(|r| r.round).collect();
        assert_eq!(rounds, [0, 1, 2], "{}", mode.name());
        for r in &summary.records {
            assert!((0.0..=1.0).contains(&r.clean_acc));
            assert!(r.robust_acc.iter().all(|(_, a)| (0.0..=1.0).contains(a)));
        }
        assert!(summary.records[2].mean_train_loss.is_some());
    }
}

fn metrics_bytes(cfg: &ExperimentConfig, threads: usize) -> (Vec<u8>, Vec<u8>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| run_experiment(cfg)).unwrap();
    (
        std::fs::read(cfg.output.dir.join("metrics.csv")).unwrap(),
        std::fs::read(cfg.output.dir.join("metrics.jsonl")).unwrap(),
    )
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("decent_bva", 4, 0.5, 3, 8, dir.path());
    let one = metrics_bytes(&cfg, 1);
    assert_eq!(one, metrics_bytes(&cfg, 1));
    assert_eq!(one, metrics_bytes(&cfg, 4));
    let checkpoint = std::fs::read(dir.path().join("checkpoint.bin")).unwrap();
    metrics_bytes(&cfg, 3);
    assert_eq!(std::fs::read(dir.path().join("checkpoint.bin")).unwrap(), checkpoint);
}

fn trace(mode: &str) -> Vec<(usize, RoundEvent)> {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = Simulation::new(&config(mode, 4, 0.5, 2, 8, dir.path())).unwrap();
    let mut events = Vec::new();
    sim.step(&mut events).unwrap();
    sim.step(&mut events).unwrap();
    events
}

fn kinds(events: &[(usize, RoundEvent)], round: usize) -> Vec<&'static str> {
    events
        .iter()
        .filter(|(r, _)| *r == round)
        .map(|(_, e)| match e {
            RoundEvent::ClientUpdate { .. } => "client",
            RoundEvent::ServerAttack { .. } => "attack",
            RoundEvent::Aggregate { .. } => "aggregate",
        })
        .collect()
}

#[test]
fn server_attack_follows_client_updates_and_precedes_aggregation() {
    let events = trace("decent_bva");
    for round in [1, 2] {
        assert_eq!(kinds(&events, round), ["client", "client", "attack", "aggregate"]);
    }
    let received: Vec<usize> = events
        .iter()
        .filter_map(|(r, e)| match e {
            RoundEvent::ClientUpdate { received_perturbed, .. } => Some(*r * 100 + received_perturbed),
            _ => None,
        })
        .collect();
    // round 1 clients get nothing; round 2 clients get the 8 examples made in round 1
    assert_eq!(received, [100, 100, 208, 208]);
    assert!(events.iter().any(|(_, e)| matches!(e, RoundEvent::ServerAttack { members: 2, produced: 8 })));
}

#[test]
fn baseline_attacks_the_aggregate_and_fedavg_never_attacks() {
    let events = trace("decent_baseline");
    assert_eq!(kinds(&events, 1), ["client", "client", "aggregate", "attack"]);
    assert!(events.iter().any(|(_, e)| matches!(e, RoundEvent::ServerAttack { members: 1, .. })));
    for mode in ["fedavg", "fedavg_robust_local"] {
        let events = trace(mode);
        assert_eq!(kinds(&events, 2), ["client", "client", "aggregate"], "{mode}");
        assert!(events
            .iter()
            .all(|(_, e)| !matches!(e, RoundEvent::ClientUpdate { received_perturbed, .. } if *received_perturbed > 0)));
    }
}

#[test]
fn clients_only_ever_receive_perturbed_server_examples() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = Simulation::new(&config("decent_bva", 4, 0.5, 1, 8, dir.path())).unwrap();
    assert!(sim.server.perturbed_set.is_empty());
    sim.step(&mut ()).unwrap();
    let clean = &sim.server.server_set;
    let sent = &sim.server.perturbed_set;
    assert_eq!(sent.examples.labels(), clean.labels());
    let eps = sim.cfg.attack.epsilon;
    let mut moved = 0;
    for (x, x_hat) in clean.features().iter().zip(sent.examples.features()) {
        let d = x.linf_distance(x_hat).unwrap();
        assert!(d <= eps + 1e-12);
        moved += usize::from(d > 0.0);
    }
    assert!(moved > 0);
    assert_eq!(sent.provenance.as_ref().unwrap().round, 1);
    // server examples never enter a client shard
    let shard_total: usize = sim.clients.iter().map(|c| c.local_set.len()).sum();
    assert_eq!(shard_total + clean.len(), 80);
}

#[test]
fn client_failures_carry_round_and_client() {
    let dir = tempfile::tempdir().unwrap();
    let mut sim = Simulation::new(&config("fedavg", 4, 1.0, 1, 8, dir.path())).unwrap();
    sim.clients[2].model = ModelState::zeros(ArchSpec::mlp(2, &[], 2)).unwrap();
    match sim.step(&mut ()) {
        Err(Error::Client { round, client, .. }) => assert_eq!((round, client), (1, 2)),
        other => panic!("expected a client error, got {other:?}"),
    }
}

/// Plain minibatch momentum SGD over one dataset with the per-round
/// shuffling streams a single federated client would use.
#[test]
fn single_client_fedavg_is_centralized_sgd() {
    for persist in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config("fedavg", 1, 1.0, 5, 8, dir.path());
        cfg.protocol.local_epochs = 2;
        cfg.protocol.persist_momentum = persist;
        let mut sim = Simulation::new(&cfg).unwrap();
        let init = sim.server.global_model.clone();
        let data = sim.clients[0].local_set.clone();
        for _ in 0..5 {
            sim.step(&mut ()).unwrap();
        }
        let reference = centralized(&cfg, &init, &data, 5);
        let worst = sim
            .server
            .global_model
            .params()
            .iter()
            .zip(reference.params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-9, "persist={persist}: {worst}");
        assert_ne!(&init, &reference);
    }
}
