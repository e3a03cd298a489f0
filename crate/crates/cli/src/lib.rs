//! Experiment orchestration for the reversal study: configuration,
//! checkpoints, the end-to-end pipeline and reports.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{EvalConfig, ExperimentConfig, RolloutLength};
pub use error::CliError;
pub use pipeline::{run_experiment, run_experiment_with, RunOptions};
pub use report::{emit_report, load_report, EvalReport};
