//! Experiment orchestration: configuration, IQ datasets and sweeps.

pub mod config;
pub mod experiment;
pub mod iq;

pub use config::{ExperimentConfig, Terminal};
pub use experiment::{
    extract_record, run_experiment, simulate_condition, subframe_seed, training_seed, with_workers, condition_tag, AblationRow, AccuracyRow,
    Classifier, Condition, ExperimentResults, Role, Simulator,
};
pub use iq::{extract_features, write_dataset, ExtractedDataset, generate_dataset, IqDataset, IqManifest, RecordMeta};
