//! Bias and variance of the final client ensemble as the hidden layer widens.
//!
//! cargo run --release --example width_sweep

use decent_bva::harness::{bv_sweep, bv_table, load_config};

fn main() -> decent_bva::Result<()> {
    let cfg = load_config(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/blobs_sweep.toml"))?;
    let rows = bv_sweep(&cfg)?;
    println!("{:>6} {:>7} {:>9} {:>9}", "width", "params", "bias", "variance");
    for s in bv_table(&rows) {
        println!("{:>6} {:>7} {:>9.4} {:>9.4}", s.width, s.param_count, s.median_bias, s.median_variance);
    }
    Ok(())
}
