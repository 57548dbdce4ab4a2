//! Datasets, synthetic data, checkpoints and run configuration.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{write_history, write_manifest, RunConfig};
pub use dataset::{compact, load_dir, load_split, write_split, DatasetSplit, DatasetStats};
pub use synth::{generate_synthetic, SynthConfig};
