//! Knowledge tuples, the synthetic demonstrator, and imitation learning.

mod demo;
mod il;
mod sample;

pub use demo::{generate_demonstration, DemoConfig};
pub use il::{extract_samples, train_il, DrivingLog, IlConfig, Policy, PolicyController, TrainReport};
pub(crate) use il::{contiguous_runs, sample_for_window, targets};
pub use sample::{
    policy_features, read_memory_samples, write_samples, Dataset, Provenance, Sample, N_FEATURES,
};
