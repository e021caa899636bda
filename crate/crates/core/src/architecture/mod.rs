//! Encoder/decoder network assembled from transformer blocks.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ModelConfig, DOWNSAMPLINGS, STAGES};
pub use model::*;
