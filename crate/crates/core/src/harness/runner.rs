use std::path::PathBuf;
use std::time::Instant;

use super::config::{DataSource, ExperimentConfig};
use super::eval::{evaluate, Accuracy};
use super::metrics::{emit_metrics, metrics_path, RoundRecord};
use crate::data::{load_csv, load_idx, partition, synth_blobs, BlobSpec, CsvOptions, LabeledSet, Partition};
use crate::error::{Error, Result};
use crate::federation::{encode_server, run_round, ClientState, RoundObserver, RoundStats, ServerState};
use crate::nn::ModelState;
use crate::seed::{derive, purpose};

/// Training pool and test set of an experiment.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: LabeledSet,
    pub test: LabeledSet,
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let classes = cfg.model.class_count;
    let (train, test) = match &cfg.dataset.source {
        DataSource::Synth { train, test_per_class } => {
            let test_spec = BlobSpec {
                per_class: *test_per_class,
                ..train.clone()
            };
            (
                synth_blobs(train, derive(cfg.master_seed, &[purpose::DATA]))?,
                synth_blobs(&test_spec, derive(cfg.master_seed, &[purpose::TEST_DATA]))?,
            )
        }
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            load_idx(train_images, train_labels)?.with_classes(classes)?,
            load_idx(test_images, test_labels)?.with_classes(classes)?,
        ),
        DataSource::Csv {
            train,
            test,
            label_col,
            feature_cols,
            normalize,
        } => {
            let opts = CsvOptions {
                feature_cols: feature_cols.clone(),
                label_col: label_col.clone(),
                class_count: classes,
                normalize: *normalize,
            };
            (load_csv(train, &opts)?, load_csv(test, &opts)?)
        }
    };
    for set in [&train, &test] {
        if let Some(x) = set.features().first() {
            x.check_shape(&cfg.model.input_shape)?;
        }
    }
    Ok(Datasets { train, test })
}

/// Splits the training pool into the server set and client shards.
pub fn split(cfg: &ExperimentConfig, train: &LabeledSet) -> Result<Partition> {
    let spec = cfg.dataset.partition.spec(derive(cfg.master_seed, &[purpose::PARTITION]));
    partition(train, &spec, cfg.dataset.server_size)
}

/// Live state of one experiment between rounds.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub cfg: ExperimentConfig,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub test: LabeledSet,
    /// Ids of the clients that trained in the last round.
    pub last_sampled: Vec<usize>,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let data = load_datasets(cfg)?;
        let parts = split(cfg, &data.train)?;
        let model = ModelState::init(cfg.model.clone(), derive(cfg.master_seed, &[purpose::INIT]))?;
        let clients = parts
            .clients
            .into_iter()
            .enumerate()
            .map(|(i, set)| ClientState::new(i, set, model.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            server: ServerState::new(model, parts.server),
            clients,
            test: data.test,
            last_sampled: Vec::new(),
        })
    }

    pub fn round(&self) -> usize {
        self.server.round
    }

    pub fn step(&mut self, observer: &mut dyn RoundObserver) -> Result<RoundStats> {
        let stats = run_round(&mut self.server, &mut self.clients, &self.cfg.plan(), self.cfg.master_seed, observer)?;
        self.last_sampled = stats.sampled.clone();
        Ok(stats)
    }

    /// The models returned by the last round's clients, or the global model
    /// before any round has run.
    pub fn last_ensemble(&self) -> Vec<ModelState> {
        if self.last_sampled.is_empty() {
            return vec![self.server.global_model.clone()];
        }
        self.last_sampled.iter().map(|&i| self.clients[i].model.clone()).collect()
    }

    /// Evaluates the global model on the test set under the configured attacks.
    pub fn evaluate(&self) -> Result<Accuracy> {
        let seed = derive(self.cfg.master_seed, &[purpose::EVAL, self.round() as u64]);
        evaluate(&self.server.global_model, &self.test, &self.cfg.eval.attacks, seed)
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub records: Vec<RoundRecord>,
    pub final_model: ModelState,
}

fn record(round: usize, acc: Accuracy, stats: Option<&RoundStats>, wall_ms: u64) -> RoundRecord {
    RoundRecord {
        round,
        clean_acc: acc.clean,
        robust_acc: acc.robust,
        mean_train_loss: stats.and_then(|s| s.mean_train_loss),
        mean_bias: stats.and_then(|s| s.mean_bias),
        mean_variance: stats.and_then(|s| s.mean_variance),
        wall_ms,
    }
}

/// Runs all rounds, writing metrics after every evaluation and a server
/// checkpoint at the end. Existing metrics files in the run directory are
/// replaced.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let dir = cfg.output.dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for &format in &cfg.output.formats {
        let path = metrics_path(&dir, format);
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    let write = |r: &RoundRecord| -> Result<()> {
        for &format in &cfg.output.formats {
            emit_metrics(std::slice::from_ref(r), &metrics_path(&dir, format), format)?;
        }
        Ok(())
    };

    let mut sim = Simulation::new(cfg)?;
    let mut records = vec![record(0, sim.evaluate()?, None, 0)];
    write(&records[0])?;

    let rounds = cfg.protocol.rounds;
    for r in 1..=rounds {
        let started = Instant::now();
        let stats = sim.step(&mut ())?;
        let wall_ms = if cfg.output.record_wall_time {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        log::info!(
            "round {r}/{rounds}: train loss {:?}, bias {:?}, variance {:?}",
            stats.mean_train_loss,
            stats.mean_bias,
            stats.mean_variance
        );
        if r % cfg.eval.cadence == 0 || r == rounds {
            let rec = record(r, sim.evaluate()?, Some(&stats), wall_ms);
            log::info!("round {r}: clean {:.4} robust {:?}", rec.clean_acc, rec.robust_acc);
            write(&rec)?;
            records.push(rec);
        }
    }

    if cfg.output.checkpoint {
        let path = dir.join("checkpoint.bin");
        std::fs::write(&path, encode_server(&sim.server)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(RunSummary {
        dir,
        records,
        final_model: sim.server.global_model,
    })
}
