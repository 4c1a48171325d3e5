//! Synthetic two-class imagery and client partitioning.
//!
//! Class 0 (Non-Demented) images show a centered bright disc, class 1
//! (Demented) images a bright ring around a dark center.

mod file;
mod partition;
mod synth;

pub use file::{read_dataset, read_dataset_file, write_dataset, write_dataset_file, DATASET_MAGIC, DATASET_VERSION};
pub use partition::{partition_iid, partition_label_skew, train_test_split, Partition};
pub use synth::{generate_dataset, template, SyntheticConfig};
