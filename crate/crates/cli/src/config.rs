//! Experiment configuration: one TOML document covering data generation,
//! the model, training and reporting.

use std::fs;
use std::path::{Path, PathBuf};

use pfedcr_core::datagen::{auto_client_specs, replicate_specs, BucketSet, ClientSpec};
use pfedcr_core::fedsim::{Algorithm, TrainConfig};
use pfedcr_core::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Corpus recipe. Either `specs` lists the clients explicitly or they are
/// derived from `alphabet_size`, `clients`, the split sizes and
/// `train_coverage`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub alphabet_size: usize,
    pub clients: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of the alphabet each client's train split may use.
    pub train_coverage: f64,
    /// Lines in the server's balanced corpus; defaults to
    /// `5 * n_train / clients` (at least one per character).
    pub virtual_lines: Option<usize>,
    /// Clients per spec; 3 gives the nine-client layout from three specs.
    pub copies: usize,
    pub specs: Option<Vec<ClientSpec>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 40,
            clients: 3,
            n_train: 2000,
            n_test: 300,
            train_coverage: 0.75,
            virtual_lines: None,
            copies: 1,
            specs: None,
        }
    }
}

impl DataConfig {
    /// Client specs after replication.
    pub fn client_specs(&self, seed: u64) -> Result<Vec<ClientSpec>> {
        let base = match &self.specs {
            Some(specs) => {
                for s in specs {
                    s.validate(self.alphabet_size)?;
                }
                specs.clone()
            }
            None => auto_client_specs(
                self.alphabet_size,
                self.clients,
                self.n_train,
                self.n_test,
                self.train_coverage,
                seed,
            )?,
        };
        Ok(replicate_specs(&base, self.copies)?)
    }

    pub fn client_count(&self) -> usize {
        self.specs.as_ref().map_or(self.clients, Vec::len) * self.copies
    }

    pub fn virtual_line_count(&self) -> usize {
        self.virtual_lines
            .unwrap_or(5 * self.n_train / self.clients.max(1))
            .max(self.alphabet_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for data, initialization and training order.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Frequency-bucket preset: `desk` or `large`.
    pub buckets: String,
    /// Seeds of a multi-seed ablation; empty means `[seed]`.
    pub ablation_seeds: Vec<u64>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            buckets: "desk".into(),
            ablation_seeds: Vec::new(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub algorithm: Option<Algorithm>,
    pub buckets: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Parse {
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })
    }

    /// Reads `path`, or starts from the defaults when there is none.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_toml(&fs::read_to_string(p).map_err(CliError::io(p))?, p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(a) = o.algorithm {
            self.train.algorithm = a;
        }
        if let Some(b) = &o.buckets {
            self.buckets = b.clone();
        }
    }

    /// Makes the derived fields agree with their sources (alphabet, client
    /// count, seed, bucket edges) and validates the whole document.
    pub fn normalize(&mut self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed {} does not fit a TOML integer", self.seed)));
        }
        let d = &self.data;
        if d.copies == 0 || d.client_count() == 0 {
            return Err(CliError::Config("data needs at least one client and copies >= 1".into()));
        }
        if d.n_train == 0 || d.n_test == 0 {
            return Err(CliError::Config("n_train and n_test must be >= 1".into()));
        }
        self.model.alphabet_size = d.alphabet_size;
        self.model.validate()?;
        self.train.clients = d.client_count();
        self.train.seed = self.seed;
        self.train.eval.buckets = Some(BucketSet::preset(&self.buckets)?);
        self.train.validate()?;
        Ok(())
    }

    /// The configuration of a run with a different master seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.train.seed = seed;
        c
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.ablation_seeds.is_empty() {
            vec![self.seed]
        } else {
            self.ablation_seeds.clone()
        }
    }

    /// Writes the effective configuration to `dir/config.toml`.
    pub fn write_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let path = dir.join("config.toml");
        fs::write(&path, self.to_toml()?).map_err(CliError::io(&path))?;
        Ok(path)
    }
}
