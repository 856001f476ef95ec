//! Runs the two-blob setup under `decent_bva` and plain `fedavg` and prints
//! clean and robust accuracy of each final model.
//!
//! cargo run --release --example quickstart [seed]

use decent_bva::federation::Mode;
use decent_bva::harness::{load_config, run_experiment};

fn main() -> decent_bva::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let mut cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/blobs_robustness.toml"))?;
    cfg.master_seed = seed;
    let out = std::env::temp_dir().join("decent-bva-quickstart");

    for mode in [Mode::DecentBva, Mode::Fedavg] {
        let mut run = cfg.with_mode(mode)?;
        run.output.dir = out.join(mode.name());
        let summary = run_experiment(&run)?;
        let last = summary.records.last().unwrap();
        print!("{:<12} round {:>2}  clean {:.3}", mode.name(), last.round, last.clean_acc);
        for (name, acc) in &last.robust_acc {
            print!("  {name} {acc:.3}");
        }
        println!();
    }
    println!("metrics under {}", out.display());
    Ok(())
}
