//! Experiment orchestration: configuration, seeded end-to-end runs of the
//! revisit and section protocols, metrics, noise replay and comparison.

mod commands;
mod config;
mod pipeline;

pub use commands::{
    cmd_compare, cmd_demo_gen, cmd_noise_replay, cmd_run, cmd_train_il, compare_summaries,
    noise_replay, CompareRow, DemoOutcome, NoiseOutcome, NoiseReport,
};
pub use config::{derive_seed, CompareConfig, ExperimentConfig, Method, Protocol, SensorNoise};
pub use pipeline::{
    corrupt_log, demo_samples, files, generate_demo, load_base, log_metrics, prepare_base,
    read_summary, run_method, summarize, train_base, write_run, write_summary, BaseArtifacts,
    MethodLearner, MpcLearner, NoisyLearner, RunOutcome, SummaryRow,
};
