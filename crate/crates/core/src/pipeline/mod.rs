//! End-to-end model, training loop, evaluation and experiment drivers.

pub mod config;
mod eval;
mod experiments;
mod model;
mod train;

pub use config::Config;
pub use eval::{evaluate, ClassMetrics, Evaluation, MetricsReport};
pub use experiments::{ablate, ablation_configs, sweep_k, write_k_csv, AblationRow, AblationTable, KChoice, KRow};
pub use model::{sidecar_path, Forward, Model};
pub use train::{train, EpochLog, TrainRun};
