use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::attacks::{AttackConfig, AttackKind};
use crate::data::{BlobSpec, PartitionScheme, PartitionSpec};
use crate::error::{Error, Result};
use crate::federation::{Mode, RoundPlan};
use crate::nn::{ArchSpec, LossKind};

/// A validated, fully defaulted experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub dataset: DatasetConfig,
    pub model: ArchSpec,
    pub protocol: ProtocolConfig,
    /// Server attack; also the source of epsilon for local adversarial training.
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub partition: PartitionConfig,
    pub server_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth {
        train: BlobSpec,
        /// Test examples per class, drawn from the same blobs.
        test_per_class: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        label_col: String,
        /// Empty means every column except the label.
        feature_cols: Vec<String>,
        normalize: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(default = "default_scheme")]
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    /// Defaults to `num_clients * shards_per_client`.
    #[serde(default)]
    pub shards_total: Option<usize>,
    #[serde(default = "default_shards_per_client")]
    pub shards_per_client: usize,
}

impl PartitionConfig {
    pub fn spec(&self, seed: u64) -> PartitionSpec {
        PartitionSpec {
            scheme: self.scheme,
            num_clients: self.num_clients,
            shards_total: self.shards_total.unwrap_or(self.num_clients * self.shards_per_client),
            shards_per_client: self.shards_per_client,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub persist_momentum: bool,
    /// Overrides `attack.lambda` when given.
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        toml::from_str("").expect("all protocol fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Evaluate every `cadence` rounds (and always after the last round).
    pub cadence: usize,
    pub attacks: Vec<NamedAttack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedAttack {
    pub name: String,
    pub config: AttackConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricsFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<MetricsFormat>,
    /// Record real elapsed time; off keeps metrics byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "yes")]
    pub checkpoint: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        toml::from_str("").expect("all output fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Hidden widths of the one-hidden-layer MLPs compared by the sweep.
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    /// Master seeds; empty means just the experiment's `master_seed`.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        toml::from_str("").expect("all sweep fields have defaults")
    }
}

fn default_scheme() -> PartitionScheme {
    PartitionScheme::Iid
}
fn default_shards_per_client() -> usize {
    2
}
fn default_mode() -> Mode {
    Mode::DecentBva
}
fn default_rounds() -> usize {
    10
}
fn default_fraction() -> f64 {
    0.1
}
fn default_local_epochs() -> usize {
    1
}
fn default_batch_size() -> usize {
    64
}
fn default_lr() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}
fn default_formats() -> Vec<MetricsFormat> {
    vec![MetricsFormat::Csv, MetricsFormat::Jsonl]
}
fn default_widths() -> Vec<usize> {
    vec![1, 2, 8, 64]
}
fn yes() -> bool {
    true
}

// Raw document layout. Attack tables stay untyped until defaults are filled.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    #[serde(default)]
    master_seed: u64,
    dataset: RawDataset,
    model: ArchSpec,
    #[serde(default)]
    protocol: ProtocolConfig,
    #[serde(default)]
    attack: toml::Table,
    #[serde(default)]
    eval: RawEval,
    #[serde(default)]
    output: OutputConfig,
    #[serde(default)]
    sweep: SweepConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    #[serde(default = "default_server_size")]
    server_size: usize,
    partition: PartitionConfig,
    synth: Option<RawSynth>,
    idx: Option<RawIdx>,
    csv: Option<RawCsv>,
}

fn default_server_size() -> usize {
    64
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynth {
    classes: usize,
    per_class: usize,
    dims: usize,
    #[serde(default = "default_spread")]
    spread: f64,
    #[serde(default = "default_test_per_class")]
    test_per_class: usize,
}

fn default_spread() -> f64 {
    0.1
}
fn default_test_per_class() -> usize {
    100
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIdx {
    train_images: PathBuf,
    train_labels: PathBuf,
    test_images: PathBuf,
    test_labels: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCsv {
    train: PathBuf,
    test: PathBuf,
    label_col: String,
    #[serde(default)]
    feature_cols: Vec<String>,
    #[serde(default)]
    normalize: bool,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawEval {
    cadence: Option<usize>,
    attacks: Option<Vec<toml::Table>>,
}

fn invalid(key: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

/// Reads and validates a config file. Relative data paths resolve against
/// the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::parse(path, format!("cannot read config: {e}")))?;
    let base = path.parent().unwrap_or(Path::new("."));
    validate_config(&text, base).map_err(|e| match e {
        Error::Config { .. } => Error::parse(path, e.to_string()),
        other => other,
    })
}

/// Parses a config document, fills defaults and checks constraints.
/// Relative paths inside the document resolve against `base`.
pub fn validate_config(doc: &str, base: &Path) -> Result<ExperimentConfig> {
    let raw: RawDoc = toml::from_str(doc).map_err(|e| invalid(&toml_key(&e), e.message()))?;

    let dataset = dataset_section(raw.dataset, base)?;
    raw.model
        .shapes()
        .map_err(|e| invalid("model", e))?;

    let protocol = raw.protocol;
    let attack = attack_section(raw.attack, &protocol)?;
    let eval = eval_section(raw.eval, attack.epsilon)?;

    let cfg = ExperimentConfig {
        master_seed: raw.master_seed,
        dataset,
        model: raw.model,
        protocol,
        attack,
        eval,
        output: raw.output,
        sweep: raw.sweep,
    };
    check(&cfg)?;
    Ok(cfg)
}

/// Best-effort dotted key from a TOML error span's surrounding message.
fn toml_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    for pat in ["unknown field `", "missing field `"] {
        if let Some(rest) = msg.split(pat).nth(1) {
            if let Some(end) = rest.find('`') {
                return rest[..end].to_string();
            }
        }
    }
    "document".to_string()
}

fn dataset_section(raw: RawDataset, base: &Path) -> Result<DatasetConfig> {
    let chosen = [raw.synth.is_some(), raw.idx.is_some(), raw.csv.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if chosen != 1 {
        return Err(invalid(
            "dataset",
            "exactly one of [dataset.synth], [dataset.idx] or [dataset.csv] is required",
        ));
    }
    let resolve = |key: &str, p: PathBuf| -> Result<PathBuf> {
        let full = if p.is_absolute() { p } else { base.join(p) };
        if !full.is_file() {
            return Err(invalid(key, format!("file {} does not exist", full.display())));
        }
        Ok(full)
    };
    let source = if let Some(s) = raw.synth {
        let train = BlobSpec {
            classes: s.classes,
            per_class: s.per_class,
            dims: s.dims,
            spread: s.spread,
        };
        if s.classes < 2 {
            return Err(invalid("dataset.synth.classes", "must be at least 2"));
        }
        if s.dims == 0 {
            return Err(invalid("dataset.synth.dims", "must be at least 1"));
        }
        if s.per_class == 0 {
            return Err(invalid("dataset.synth.per_class", "must be at least 1"));
        }
        if !(s.spread >= 0.0 && s.spread.is_finite()) {
            return Err(invalid("dataset.synth.spread", "must be finite and >= 0"));
        }
        DataSource::Synth {
            train,
            test_per_class: s.test_per_class,
        }
    } else if let Some(i) = raw.idx {
        DataSource::Idx {
            train_images: resolve("dataset.idx.train_images", i.train_images)?,
            train_labels: resolve("dataset.idx.train_labels", i.train_labels)?,
            test_images: resolve("dataset.idx.test_images", i.test_images)?,
            test_labels: resolve("dataset.idx.test_labels", i.test_labels)?,
        }
    } else {
        let c = raw.csv.expect("one source is present");
        DataSource::Csv {
            train: resolve("dataset.csv.train", c.train)?,
            test: resolve("dataset.csv.test", c.test)?,
            label_col: c.label_col,
            feature_cols: c.feature_cols,
            normalize: c.normalize,
        }
    };
    raw.partition
        .spec(0)
        .validate()
        .map_err(|e| invalid("dataset.partition", e))?;
    Ok(DatasetConfig {
        source,
        partition: raw.partition,
        server_size: raw.server_size,
    })
}

fn typed_attack(key: &str, mut table: toml::Table, default_kind: Option<&str>) -> Result<(Option<String>, AttackConfig)> {
    let name = match table.remove("name") {
        Some(toml::Value::String(s)) => Some(s),
        Some(_) => return Err(invalid(&format!("{key}.name"), "must be a string")),
        None => None,
    };
    if let Some(kind) = default_kind {
        table
            .entry("kind")
            .or_insert_with(|| toml::Value::String(kind.to_string()));
    }
    let cfg: AttackConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| invalid(&format!("{key}.{}", toml_key(&e)), e.message()))?;
    cfg.validate().map_err(|e| invalid(key, e))?;
    if cfg.epsilon == 0.0 {
        return Err(invalid(&format!("{key}.epsilon"), "must be > 0"));
    }
    Ok((name, cfg))
}

fn attack_section(table: toml::Table, protocol: &ProtocolConfig) -> Result<AttackConfig> {
    let (name, mut cfg) = typed_attack("attack", table, Some("bv_fgsm"))?;
    if name.is_some() {
        return Err(invalid("attack.name", "the server attack takes no name"));
    }
    if let Some(l) = protocol.lambda {
        cfg.lambda = l;
        cfg.validate().map_err(|e| invalid("protocol.lambda", e))?;
    }
    if protocol.mode.uses_ensemble_attack() && !cfg.kind.uses_ensemble() {
        return Err(invalid(
            "attack.kind",
            format!("mode {} needs bv_fgsm or bv_pgd", protocol.mode.name()),
        ));
    }
    Ok(cfg)
}

fn eval_section(raw: RawEval, epsilon: f64) -> Result<EvalConfig> {
    let cadence = raw.cadence.unwrap_or(1);
    if cadence == 0 {
        return Err(invalid("eval.cadence", "must be at least 1"));
    }
    let attacks = match raw.attacks {
        None => vec![
            AttackConfig::new(AttackKind::Fgsm, epsilon),
            AttackConfig::pgd(epsilon, 10),
            AttackConfig::pgd(epsilon, 20),
        ]
        .into_iter()
        .map(|config| NamedAttack {
            name: config.default_name(),
            config,
        })
        .collect(),
        Some(tables) => {
            let mut out = Vec::with_capacity(tables.len());
            for (i, t) in tables.into_iter().enumerate() {
                let key = format!("eval.attacks[{i}]");
                let (name, config) = typed_attack(&key, t, None)?;
                if config.kind.uses_ensemble() {
                    return Err(invalid(&format!("{key}.kind"), "evaluation attacks must be fgsm or pgd"));
                }
                out.push(NamedAttack {
                    name: name.unwrap_or_else(|| config.default_name()),
                    config,
                });
            }
            out
        }
    };
    let mut seen = HashSet::new();
    for a in &attacks {
        if !seen.insert(a.name.as_str()) {
            return Err(invalid("eval.attacks", format!("duplicate attack name {:?}", a.name)));
        }
        if RESERVED_COLUMNS.contains(&a.name.as_str()) {
            return Err(invalid("eval.attacks", format!("attack name {:?} clashes with a metrics column", a.name)));
        }
    }
    Ok(EvalConfig { cadence, attacks })
}

pub(crate) const RESERVED_COLUMNS: [&str; 6] =
    ["round", "clean_acc", "mean_train_loss", "mean_bias", "mean_variance", "wall_ms"];

fn check(cfg: &ExperimentConfig) -> Result<()> {
    let p = &cfg.protocol;
    if !(p.fraction > 0.0 && p.fraction <= 1.0) {
        return Err(invalid("protocol.fraction", format!("must lie in (0, 1], got {}", p.fraction)));
    }
    if p.batch_size == 0 {
        return Err(invalid("protocol.batch_size", "must be at least 1"));
    }
    if !(p.lr > 0.0 && p.lr.is_finite()) {
        return Err(invalid("protocol.lr", format!("must be > 0, got {}", p.lr)));
    }
    if !(0.0..1.0).contains(&p.momentum) {
        return Err(invalid("protocol.momentum", format!("must lie in [0, 1), got {}", p.momentum)));
    }
    if cfg.output.formats.is_empty() {
        return Err(invalid("output.formats", "at least one format is required"));
    }
    if cfg.sweep.widths.is_empty() || cfg.sweep.widths.contains(&0) {
        return Err(invalid("sweep.widths", "needs at least one width, all >= 1"));
    }
    let data_shape_ok = match &cfg.dataset.source {
        DataSource::Synth { train, .. } => cfg.model.input_shape == [train.dims],
        _ => true,
    };
    if !data_shape_ok {
        return Err(invalid("model.input_shape", "does not match dataset.synth.dims"));
    }
    if let DataSource::Synth { train, .. } = &cfg.dataset.source {
        if cfg.model.class_count != train.classes {
            return Err(invalid("model.class_count", "does not match dataset.synth.classes"));
        }
    }
    cfg.plan().validate().map_err(|e| invalid("protocol", e))
}

impl ExperimentConfig {
    /// The per-round plan shared by server and clients.
    pub fn plan(&self) -> RoundPlan {
        let p = &self.protocol;
        RoundPlan {
            fraction: p.fraction,
            total_clients: self.dataset.partition.num_clients,
            local_epochs: p.local_epochs,
            batch_size: p.batch_size,
            lr: p.lr,
            momentum: p.momentum,
            loss: p.loss,
            mode: p.mode,
            attack: self.attack.clone(),
            persist_momentum: p.persist_momentum,
        }
    }

    /// Same experiment under another protocol mode.
    pub fn with_mode(&self, mode: Mode) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.protocol.mode = mode;
        if mode.uses_ensemble_attack() && !cfg.attack.kind.uses_ensemble() {
            cfg.attack.kind = AttackKind::BvFgsm;
            cfg.attack.steps = 1;
        }
        check(&cfg)?;
        Ok(cfg)
    }
}
