use std::path::Path;

use decent_bva::harness::load_config;

fn shipped(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

#[test]
fn synthetic_configs_load() {
    for name in ["blobs_robustness.toml", "blobs_sweep.toml", "determinism.toml", "noniid_shards.toml"] {
        let cfg = load_config(shipped(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(cfg.protocol.rounds > 0, "{name}");
    }
}

#[test]
fn mnist_config_only_lacks_its_data() {
    let err = load_config(shipped("mnist_cnn.toml")).unwrap_err().to_string();
    assert!(err.contains("train-images-idx3-ubyte"), "{err}");
}
