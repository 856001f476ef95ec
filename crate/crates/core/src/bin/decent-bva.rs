use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use decent_bva::federation::decode_server;
use decent_bva::harness::{bv_sweep, bv_table, load_config, load_datasets, split, ExperimentConfig};
use decent_bva::seed::{derive, purpose};

#[derive(Parser)]
#[command(version, about = "Federated learning with bias-variance adversarial examples")]
struct Cli {
    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the protocol and write metrics plus a checkpoint.
    Run { config: PathBuf },
    /// Evaluate a checkpoint on the config's test set.
    Eval { checkpoint: PathBuf, config: PathBuf },
    /// Bias/variance versus hidden width.
    Sweep { config: PathBuf },
    /// Print per-client class histograms.
    PartitionInspect { config: PathBuf },
}

enum Failure {
    Config(decent_bva::Error),
    Runtime(decent_bva::Error),
}

fn config(cli: &Cli, path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    let mut cfg = load_config(path).map_err(Failure::Config)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    use Failure::Runtime;
    match &cli.command {
        Command::Run { config: path } => {
            let cfg = config(cli, path)?;
            let summary = decent_bva::harness::run_experiment(&cfg).map_err(Runtime)?;
            let last = summary.records.last().expect("round 0 is always recorded");
            if !cli.quiet {
                println!("round {}: clean {:.4}", last.round, last.clean_acc);
                for (name, acc) in &last.robust_acc {
                    println!("  {name}: {acc:.4}");
                }
                println!("metrics in {}", summary.dir.display());
            }
        }
        Command::Eval { checkpoint, config: path } => {
            let cfg = config(cli, path)?;
            let bytes = std::fs::read(checkpoint).map_err(|e| Runtime(decent_bva::Error::Io {
                path: checkpoint.clone(),
                source: e,
            }))?;
            let (model, round) = decode_server(&bytes, cfg.model.clone()).map_err(Runtime)?;
            let test = load_datasets(&cfg).map_err(Runtime)?.test;
            let seed = derive(cfg.master_seed, &[purpose::EVAL, round as u64]);
            let acc = decent_bva::harness::evaluate(&model, &test, &cfg.eval.attacks, seed).map_err(Runtime)?;
            let mut obj = serde_json::Map::new();
            obj.insert("round".into(), round.into());
            obj.insert("clean_acc".into(), acc.clean.into());
            for (name, a) in acc.robust {
                obj.insert(name, a.into());
            }
            println!("{}", serde_json::Value::Object(obj));
        }
        Command::Sweep { config: path } => {
            let cfg = config(cli, path)?;
            let rows = bv_sweep(&cfg).map_err(Runtime)?;
            let dir = &cfg.output.dir;
            let out = dir.join("sweep.csv");
            let io = |e: std::io::Error| Runtime(decent_bva::Error::Io { path: out.clone(), source: e });
            std::fs::create_dir_all(dir).map_err(io)?;
            let mut w = csv::Writer::from_path(&out).map_err(|e| io(e.into()))?;
            for r in &rows {
                w.serialize(r).map_err(|e| io(e.into()))?;
            }
            w.flush().map_err(io)?;
            if !cli.quiet {
                println!("{:>8} {:>8} {:>12} {:>12}", "width", "params", "bias", "variance");
                for s in bv_table(&rows) {
                    println!(
                        "{:>8} {:>8} {:>12.6} {:>12.6}",
                        s.width, s.param_count, s.median_bias, s.median_variance
                    );
                }
            }
        }
        Command::PartitionInspect { config: path } => {
            let cfg = config(cli, path)?;
            let data = load_datasets(&cfg).map_err(Runtime)?;
            let parts = split(&cfg, &data.train).map_err(Runtime)?;
            println!("server ({}): {:?}", parts.server.len(), parts.server.class_histogram());
            for (i, c) in parts.clients.iter().enumerate() {
                println!("client {i} ({}): {:?}", c.len(), c.class_histogram());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads {n}: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
