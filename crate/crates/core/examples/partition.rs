//! IID and label-sharded splits of a ten-class set, with per-client class
//! histograms.
//!
//! cargo run --example partition

use decent_bva::data::{partition, synth_blobs, BlobSpec, PartitionSpec};

fn main() -> decent_bva::Result<()> {
    let set = synth_blobs(
        &BlobSpec {
            classes: 10,
            per_class: 60,
            dims: 4,
            spread: 0.1,
        },
        0,
    )?;
    for (name, spec) in [("iid", PartitionSpec::iid(8, 1)), ("noniid_shards", PartitionSpec::shards(8, 2, 1))] {
        let parts = partition(&set, &spec, 40)?;
        println!("{name}: server {:?}", parts.server.class_histogram());
        for (i, c) in parts.clients.iter().enumerate() {
            let labels = c.class_histogram().iter().filter(|&&n| n > 0).count();
            println!("  client {i}: {:>3} examples, {labels} labels {:?}", c.len(), c.class_histogram());
        }
    }
    Ok(())
}
