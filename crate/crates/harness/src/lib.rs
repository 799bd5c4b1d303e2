//! Config-driven experiments over the `transun` library: dataset loading,
//! replicate orchestration and report rendering.

pub mod config;
pub mod data;
pub mod report;
pub mod run;

use thiserror::Error;

pub use config::{ConfigError, ExperimentConfig};
pub use data::{load_csv, CsvError};
pub use report::{Format, ReportError, RunReport};
pub use run::run_experiment;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] CsvError),
    #[error("csv data needs at least 3 rows, got {0}")]
    TooFewRows(usize),
    #[error("replicate {replicate}, {dataset}/{method}: {message}")]
    Replicate { replicate: usize, dataset: String, method: String, message: String },
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// 1 for configuration problems, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Data(CsvError::Schema(_)) => 1,
            _ => 2,
        }
    }
}
