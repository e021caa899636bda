//! Synthetic data, volume files, run configuration, training and
//! evaluation.

pub mod data;
pub mod eval;
pub mod run_config;
pub mod train;
pub mod volume_io;

pub use data::{standardize, synth_dataset, DatasetSpec, ShapeKind, VolumeSample};
pub use eval::{evaluate, evaluate_with, DscRecord, EvalReport};
pub use run_config::{Preset, RunConfig, EVAL_BATCH_SIZE};
pub use train::{parse_metrics_log, poly_lr, sgd_momentum_step, train, LogRecord, TrainOutcome};
pub use volume_io::{read_dataset, read_volume, write_dataset, write_volume};
