use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: malformed checkpoint: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("no corpus for seed {seed} under {dir}; run `pfedcr gen` with the same config and seed first, or pass --generate")]
    MissingCorpus { dir: PathBuf, seed: u64 },

    #[error("corpus under {dir} was generated from a different data config or seed; rerun `pfedcr gen`")]
    StaleCorpus { dir: PathBuf },

    #[error("no training run under {dir}; run `pfedcr train` first")]
    MissingRun { dir: PathBuf },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] pfedcr_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
