//! Runs a few rounds, saves the server state, reloads it and evaluates the
//! restored model against the one still in memory.
//!
//! cargo run --example checkpoint

use decent_bva::federation::{decode_server, encode_server};
use decent_bva::harness::{evaluate, load_config, Simulation};

fn main() -> decent_bva::Result<()> {
    let mut cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/determinism.toml"))?;
    cfg.protocol.rounds = 3;
    let mut sim = Simulation::new(&cfg)?;
    for _ in 0..cfg.protocol.rounds {
        sim.step(&mut ())?;
    }

    let path = std::env::temp_dir().join("decent-bva-checkpoint.bin");
    std::fs::write(&path, encode_server(&sim.server)).expect("temp dir is writable");
    let bytes = std::fs::read(&path).expect("just written");
    let (restored, round) = decode_server(&bytes, cfg.model.clone())?;
    println!("{} bytes, round {round}", bytes.len());

    let live = sim.evaluate()?;
    let loaded = evaluate(&restored, &sim.test, &cfg.eval.attacks, 0)?;
    println!("in memory: clean {:.4} {:?}", live.clean, live.robust);
    println!("restored:  clean {:.4} {:?}", loaded.clean, loaded.robust);
    Ok(())
}
