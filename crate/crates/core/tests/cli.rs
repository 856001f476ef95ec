mod common;

use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decent-bva"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, doc: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, doc).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), &common::micro_config("decent_bva", 4, 0.5, 2, 8, &out));
    let o = bin(&["run", &cfg, "--threads", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("round,clean_acc,fgsm,pgd10,"));
    assert!(out.join("metrics.jsonl").is_file());

    let ckpt = out.join("checkpoint.bin");
    let o = bin(&["eval", ckpt.to_str().unwrap(), &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["round"], 2);
    let last: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(out.join("metrics.jsonl")).unwrap().lines().last().unwrap()).unwrap();
    assert_eq!(v["clean_acc"], last["clean_acc"]);
    assert_eq!(v["fgsm"], last["fgsm"]);
}

#[test]
fn flags_override_seed_and_output_and_quiet_silences() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &common::micro_config("fedavg", 4, 0.5, 1, 8, &dir.path().join("unused")));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = bin(&["--quiet", "run", &cfg, "--out-dir", a.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    bin(&["run", &cfg, "--out-dir", b.to_str().unwrap(), "--seed", "2"]);
    assert!(!dir.path().join("unused").exists());
    assert_ne!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let good = common::micro_config("fedavg", 4, 0.5, 1, 8, dir.path());
    let cases = [
        good.replace("fraction = 0.5", "fraction = 0.0"),
        good.replace("lr = 0.05", "lr = 0.05\nlearning_rate = 1"),
        good.replace("rounds = 1", "rounds = \"one\""),
    ];
    for doc in cases {
        let cfg = write_config(dir.path(), &doc);
        let o = bin(&["run", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
    }
    assert_eq!(bin(&["run", "/no/such/config.toml"]).status.code(), Some(2));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &common::micro_config("fedavg", 4, 0.5, 1, 8, dir.path()));
    let junk = dir.path().join("junk.bin");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let o = bin(&["eval", junk.to_str().unwrap(), &cfg]);
    assert_eq!(o.status.code(), Some(3));

    // a data file that exists but cannot be parsed
    std::fs::write(dir.path().join("train.csv"), "a,b,y\n0.1,zzz,0\n").unwrap();
    let doc = common::micro_config("fedavg", 4, 0.5, 1, 8, dir.path()).replace(
        "[dataset.synth]\nclasses = 2\nper_class = 40\ndims = 2\ntest_per_class = 20",
        "[dataset.csv]\ntrain = \"train.csv\"\ntest = \"train.csv\"\nlabel_col = \"y\"",
    );
    let cfg = write_config(dir.path(), &doc);
    let o = bin(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 2"));
}

#[test]
fn partition_inspect_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let doc = common::micro_config("fedavg", 4, 1.0, 1, 8, dir.path())
        .replace("num_clients = 4", "num_clients = 4\nscheme = \"noniid_shards\"\nshards_per_client = 1");
    let cfg = write_config(dir.path(), &format!("{doc}\n[sweep]\nwidths = [1, 4]\n"));
    let o = bin(&["partition-inspect", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("client ")).count(), 4);
    assert!(text.starts_with("server (8):"));

    let o = bin(&["sweep", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    assert!(rows.starts_with("seed,width,param_count,mean_bias,mean_variance"));
}
