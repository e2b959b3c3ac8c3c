//! Generated corpora on disk: one container per client (both splits), one
//! for the server's balanced set, and `corpus.json` describing them.

use std::fs;
use std::path::{Path, PathBuf};

use pfedcr_core::datagen::{build_virtual_balanced, sample_client_dataset, ClientData, ClientSpec, Dataset, GlyphAtlas};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_client, read_dataset, write_client, write_dataset, write_sidecar};
use crate::config::DataConfig;
use crate::error::{CliError, Result};

pub const META_FILE: &str = "corpus.json";
pub const VIRTUAL_FILE: &str = "virtual.pfcr";

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub specs: Vec<ClientSpec>,
    pub clients: Vec<ClientData>,
    pub virtual_data: Dataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub lines: usize,
    pub characters: u64,
    pub freq: Vec<u64>,
}

impl SplitInfo {
    fn of(d: &Dataset) -> Self {
        Self {
            lines: d.len(),
            characters: d.samples().iter().map(|s| s.label.len() as u64).sum(),
            freq: d.freq().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientInfo {
    pub client_id: u64,
    pub file: String,
    pub train: SplitInfo,
    pub test: SplitInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub seed: u64,
    pub data: DataConfig,
    pub specs: Vec<ClientSpec>,
    pub clients: Vec<ClientInfo>,
    pub virtual_file: String,
    pub virtual_data: SplitInfo,
}

pub fn client_file(k: usize) -> String {
    format!("client-{k}.pfcr")
}

/// Where `gen` puts the corpus of `seed`.
pub fn corpus_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("corpus").join(format!("seed-{seed}"))
}

pub fn generate(data: &DataConfig, seed: u64) -> Result<Corpus> {
    let atlas = GlyphAtlas::generate(data.alphabet_size, seed)?;
    let specs = data.client_specs(seed)?;
    let clients = specs
        .iter()
        .map(|s| sample_client_dataset(s, &atlas, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let virtual_data = build_virtual_balanced(&atlas, data.virtual_line_count(), seed)?;
    Ok(Corpus {
        specs,
        clients,
        virtual_data,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(format!("json: {e}")))?;
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

pub fn meta_of(corpus: &Corpus, data: &DataConfig, seed: u64) -> CorpusMeta {
    CorpusMeta {
        seed,
        data: data.clone(),
        specs: corpus.specs.clone(),
        clients: corpus
            .specs
            .iter()
            .zip(&corpus.clients)
            .enumerate()
            .map(|(k, (s, c))| ClientInfo {
                client_id: s.client_id,
                file: client_file(k),
                train: SplitInfo::of(&c.train),
                test: SplitInfo::of(&c.test),
            })
            .collect(),
        virtual_file: VIRTUAL_FILE.into(),
        virtual_data: SplitInfo::of(&corpus.virtual_data),
    }
}

/// Writes the corpus files into `dir`; returns the paths written.
pub fn write(dir: &Path, corpus: &Corpus, data: &DataConfig, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let meta = meta_of(corpus, data, seed);
    let mut written = Vec::new();
    for (k, (c, info)) in corpus.clients.iter().zip(&meta.clients).enumerate() {
        let path = dir.join(&info.file);
        write_client(&path, c)?;
        write_sidecar(&path, &serde_json::json!({ "seed": seed, "client": k, "spec": &corpus.specs[k], "train": &info.train, "test": &info.test }))?;
        written.push(path);
    }
    let path = dir.join(VIRTUAL_FILE);
    write_dataset(&path, &corpus.virtual_data)?;
    write_sidecar(&path, &serde_json::json!({ "seed": seed, "role": "virtual", "stats": &meta.virtual_data }))?;
    written.push(path);
    let path = dir.join(META_FILE);
    write_json(&path, &meta)?;
    written.push(path);
    Ok(written)
}

pub fn read_meta(dir: &Path) -> Result<CorpusMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path,
        detail: e.to_string(),
    })
}

/// Reads a corpus, checking it was generated from `data` and `seed`.
pub fn read(dir: &Path, data: &DataConfig, seed: u64) -> Result<Corpus> {
    let meta = read_meta(dir)?;
    if meta.seed != seed || &meta.data != data {
        return Err(CliError::StaleCorpus { dir: dir.to_path_buf() });
    }
    let clients = meta
        .clients
        .iter()
        .map(|c| read_client(&dir.join(&c.file)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        specs: meta.specs,
        clients,
        virtual_data: read_dataset(&dir.join(&meta.virtual_file))?,
    })
}

/// The corpus of `seed` under `out`; generated (and written) when missing
/// and `allow_generate` is set.
pub fn load_or_generate(out: &Path, data: &DataConfig, seed: u64, allow_generate: bool) -> Result<Corpus> {
    let dir = corpus_dir(out, seed);
    if dir.join(META_FILE).exists() {
        return read(&dir, data, seed);
    }
    if !allow_generate {
        return Err(CliError::MissingCorpus { dir, seed });
    }
    let corpus = generate(data, seed)?;
    write(&dir, &corpus, data, seed)?;
    Ok(corpus)
}
