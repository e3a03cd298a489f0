use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::checkpoint::CheckpointError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] reversal_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("report: {0}")]
    Report(String),
    #[error("stage {stage} failed: {source}{}", partial_note(.artifacts))]
    Stage { stage: String, source: Box<CliError>, artifacts: Vec<PathBuf> },
}

fn partial_note(paths: &[PathBuf]) -> String {
    if paths.is_empty() {
        return String::new();
    }
    let list: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    format!(" (partial artifacts: {})", list.join(", "))
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn checkpoint(path: &Path, source: CheckpointError) -> Self {
        CliError::Checkpoint { path: path.to_path_buf(), source }
    }
}
