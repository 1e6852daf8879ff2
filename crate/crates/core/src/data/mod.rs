//! Datasets, their on-disk formats, and checkpoints.

pub mod checkpoint;
pub mod cifar;
pub mod dataset;
pub mod idx;
pub mod synth;

pub use checkpoint::{Checkpoint, LayerState, Phase};
pub use cifar::load_cifar10;
pub use dataset::{ChannelStats, DataSplits, Dataset, Split};
pub use idx::{load_idx, load_idx_dir};
pub use synth::{synth_dataset, synth_splits};
