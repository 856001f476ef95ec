//! Config-driven experiments: dataset construction, the round loop,
//! evaluation under FGSM/PGD, metrics files and the width sweep.

mod config;
mod eval;
mod metrics;
mod runner;
mod sweep;

pub use config::{
    load_config, validate_config, DataSource, DatasetConfig, EvalConfig, ExperimentConfig, MetricsFormat, NamedAttack,
    OutputConfig, PartitionConfig, ProtocolConfig, SweepConfig,
};
pub use eval::{accuracy, evaluate, Accuracy};
pub use metrics::{emit_metrics, metrics_path, RoundRecord};
pub use runner::{load_datasets, run_experiment, split, Datasets, RunSummary, Simulation};
pub use sweep::{bv_sweep, bv_table, ensemble_bv, mlp_of_width, SweepRow, SweepSummary};
