//! Experiment drivers behind the `posegeom` CLI: configuration, scene and
//! tensor IO, the solve/eval/gradcheck/sweep commands and report emission.

use std::io;
use std::path::{Path, PathBuf};

use crate::error::GeomError;

pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod report;
pub mod scene_io;
pub mod tensor;

pub use commands::{run, CommandOutput};
pub use config::{ExperimentConfig, Task};
pub use report::RunReport;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Stream(#[from] io::Error),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("missing model '{0}'")]
    MissingModel(String),
    #[error("tensor format: {0}")]
    Format(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

impl HarnessError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::InvalidConfig(_) | HarnessError::Schema(_) => 2,
            HarnessError::MissingModel(_) => 3,
            HarnessError::Io { .. } | HarnessError::Stream(_) | HarnessError::Format(_) => 4,
            HarnessError::Geom(_) => 5,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> HarnessResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> HarnessResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Schema(format!("{}: {e}", path.display())))
}
