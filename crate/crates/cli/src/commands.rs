//! The four commands. Each writes its effective configuration next to its
//! outputs.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! config.toml
//! corpus/seed-<s>/            client-<k>.pfcr, virtual.pfcr, corpus.json
//! runs/<algorithm>-seed-<s>/  config.toml, metrics.csv, metrics.json, run.json,
//!                             checkpoints/*.pfcr, eval/
//! ablation/                   config.toml, ablation.csv, ablation.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use pfedcr_core::datagen::BucketSet;
use pfedcr_core::eval::{evaluate_round, run_ablation, summarize, AblationTable, EvalRequest, RoundReport};
use pfedcr_core::fedsim::{run, Algorithm, RunOutput};
use pfedcr_core::{Crnn, GroupSet, ModelConfig, ParamSet};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_params, write_params, write_sidecar};
use crate::config::ExperimentConfig;
use crate::corpus::{self, corpus_dir, load_or_generate};
use crate::error::{CliError, Result};
use crate::metrics;

pub const RUN_FILE: &str = "run.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(format!("json: {e}")))?;
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

#[derive(Clone, Debug)]
pub struct GenOutput {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Generates the corpus of `cfg.seed` and writes it under `out_dir`.
pub fn gen(cfg: &ExperimentConfig) -> Result<GenOutput> {
    cfg.write_to(&cfg.out_dir)?;
    let dir = corpus_dir(&cfg.out_dir, cfg.seed);
    let c = corpus::generate(&cfg.data, cfg.seed)?;
    let files = corpus::write(&dir, &c, &cfg.data, cfg.seed)?;
    Ok(GenOutput { dir, files })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub file: String,
    pub role: String,
    pub client: Option<usize>,
}

/// `run.json`: what a training run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub algorithm: Algorithm,
    pub rounds: usize,
    /// Round index of the final report.
    pub final_round: usize,
    pub model: ModelConfig,
    pub checkpoints: Vec<CheckpointInfo>,
    /// Per client, the checkpoint file the final report evaluated.
    pub evaluated: Vec<String>,
}

pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir
        .join("runs")
        .join(format!("{}-seed-{}", cfg.train.algorithm, cfg.seed))
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub run: RunOutput,
}

/// Trains the configured algorithm on the corpus of `cfg.seed`.
pub fn train(cfg: &ExperimentConfig, allow_generate: bool) -> Result<TrainOutput> {
    let corpus = load_or_generate(&cfg.out_dir, &cfg.data, cfg.seed, allow_generate)?;
    let out = run(&cfg.train, &cfg.model, &corpus.clients, Some(&corpus.virtual_data))?;
    let dir = run_dir(cfg);
    mkdir(&dir)?;
    cfg.write_to(&cfg.out_dir)?;
    cfg.write_to(&dir)?;
    metrics::write_csv(&dir.join("metrics.csv"), &metrics::rows(&out.reports))?;
    metrics::write_json(&dir.join("metrics.json"), cfg, &out.reports)?;
    let manifest = save_checkpoints(&dir, cfg, &out)?;
    write_json(&dir.join(RUN_FILE), &manifest)?;
    Ok(TrainOutput { dir, manifest, run: out })
}

fn save_checkpoints(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<RunManifest> {
    let ck = dir.join("checkpoints");
    mkdir(&ck)?;
    let algorithm = cfg.train.algorithm;
    let final_round = out.final_report().round;
    let mut saved: Vec<(CheckpointInfo, &ParamSet)> = Vec::new();
    let save = |file: String, role: &str, client: Option<usize>, params: &ParamSet| -> Result<CheckpointInfo> {
        let path = ck.join(&file);
        write_params(&path, params)?;
        write_sidecar(
            &path,
            &serde_json::json!({
                "seed": cfg.seed,
                "algorithm": algorithm,
                "role": role,
                "client": client,
                "rounds": out.state.round,
                "model": &out.model_config,
            }),
        )?;
        Ok(CheckpointInfo {
            file: format!("checkpoints/{file}"),
            role: role.into(),
            client,
        })
    };
    if let Some(g) = &out.state.global {
        saved.push((save("global.pfcr".into(), "global", None, g)?, g));
    }
    for (k, p) in out.state.personalized.iter().enumerate() {
        saved.push((save(format!("personalized-{k}.pfcr"), "personalized", Some(k), p)?, p));
    }
    if !algorithm.is_federated() || algorithm == Algorithm::FedAvgFt {
        for (k, p) in out.state.locals.iter().enumerate() {
            saved.push((save(format!("local-{k}.pfcr"), "local", Some(k), p)?, p));
        }
    }
    let mut evaluated = Vec::new();
    let mut extra = Vec::new();
    for (k, e) in out.state.evaluated.iter().enumerate() {
        // prefer the client's own file when a shared one holds the same values
        let same = saved
            .iter()
            .filter(|(info, _)| info.client == Some(k))
            .chain(saved.iter().filter(|(info, _)| info.client.is_none()))
            .find(|(_, p)| p.values_bits_eq(e, GroupSet::ALL));
        match same {
            Some((info, _)) => evaluated.push(info.file.clone()),
            None => {
                let info = save(format!("evaluated-{k}.pfcr"), "evaluated", Some(k), e)?;
                evaluated.push(info.file.clone());
                extra.push(info);
            }
        }
    }
    Ok(RunManifest {
        seed: cfg.seed,
        algorithm,
        rounds: cfg.train.rounds,
        final_round,
        model: out.model_config.clone(),
        checkpoints: saved.into_iter().map(|(i, _)| i).chain(extra).collect(),
        evaluated,
    })
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(RUN_FILE);
    if !path.exists() {
        return Err(CliError::MissingRun { dir: dir.to_path_buf() });
    }
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse { path, detail: e.to_string() })
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub dir: PathBuf,
    pub report: RoundReport,
}

/// Re-evaluates the checkpoints of the run `cfg` names: accuracy table,
/// K x K cross matrix and frequency-bucket table.
pub fn eval(cfg: &ExperimentConfig, allow_generate: bool) -> Result<EvalOutput> {
    let dir = run_dir(cfg);
    let manifest = read_manifest(&dir)?;
    let model = Crnn::new(cfg.train.effective_model(&cfg.model))?;
    let mut models = Vec::with_capacity(manifest.evaluated.len());
    for file in &manifest.evaluated {
        let path = dir.join(file);
        let params = read_params(&path)?;
        model.check_params(&params).map_err(|e| CliError::Checkpoint {
            path: path.clone(),
            detail: format!("does not match the configured model: {e}"),
        })?;
        models.push(params);
    }
    let corpus = load_or_generate(&cfg.out_dir, &cfg.data, cfg.seed, allow_generate)?;
    if models.len() != corpus.clients.len() {
        return Err(CliError::Config(format!(
            "run has {} evaluated models but the corpus has {} clients",
            models.len(),
            corpus.clients.len()
        )));
    }
    let refs: Vec<&ParamSet> = models.iter().collect();
    let tests: Vec<_> = corpus.clients.iter().map(|c| &c.test).collect();
    let freqs: Vec<&[u64]> = corpus.clients.iter().map(|c| c.train.freq()).collect();
    let buckets = cfg.train.eval.buckets.clone().unwrap_or_else(BucketSet::desk);
    let request = EvalRequest {
        cross: true,
        buckets: Some(&buckets),
    };
    let report = evaluate_round(&model, manifest.final_round, manifest.algorithm, &refs, &tests, &freqs, &request)?;

    let out = dir.join("eval");
    mkdir(&out)?;
    cfg.write_to(&out)?;
    write_json(&out.join("report.json"), &serde_json::json!({ "seed": cfg.seed, "config": cfg, "report": &report }))?;
    let mut w = csv::Writer::from_path(out.join("accuracy.csv"))?;
    w.write_record(["client", "seq_acc", "mean_ctc_loss"])?;
    for (k, c) in report.clients.iter().enumerate() {
        w.write_record([k.to_string(), c.seq_acc.to_string(), c.mean_ctc_loss.to_string()])?;
    }
    w.flush().map_err(CliError::io(&out))?;
    let mut w = csv::Writer::from_path(out.join("cross.csv"))?;
    let k = report.clients.len();
    w.write_record(std::iter::once("model".to_string()).chain((0..k).map(|j| format!("test_{j}"))))?;
    for (i, row) in report.cross.iter().flatten().enumerate() {
        w.write_record(std::iter::once(i.to_string()).chain(row.iter().map(f64::to_string)))?;
    }
    w.flush().map_err(CliError::io(&out))?;
    let mut w = csv::Writer::from_path(out.join("buckets.csv"))?;
    w.write_record(std::iter::once("client".to_string()).chain(buckets.labels()))?;
    for (i, row) in report.buckets.iter().flatten().enumerate() {
        let cells = row.iter().map(|b| b.accuracy().map_or_else(String::new, |a| a.to_string()));
        w.write_record(std::iter::once(i.to_string()).chain(cells))?;
    }
    w.flush().map_err(CliError::io(&out))?;
    Ok(EvalOutput { dir: out, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationDoc {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub tables: Vec<AblationTable>,
}

#[derive(Clone, Debug)]
pub struct AblateOutput {
    pub dir: PathBuf,
    pub doc: AblationDoc,
}

/// Runs the five-row component ablation for every configured seed and
/// writes the table; with several seeds, mean and spread columns follow
/// the per-seed averages.
pub fn ablate(cfg: &ExperimentConfig, allow_generate: bool) -> Result<AblateOutput> {
    let seeds = cfg.seeds();
    let mut tables = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let c = cfg.with_seed(seed);
        let corpus = load_or_generate(&c.out_dir, &c.data, seed, allow_generate)?;
        let (table, _) = run_ablation(&c.train, &c.model, &corpus.clients, Some(&corpus.virtual_data))?;
        tables.push(table);
    }
    let dir = cfg.out_dir.join("ablation");
    mkdir(&dir)?;
    cfg.write_to(&cfg.out_dir)?;
    cfg.write_to(&dir)?;
    let doc = AblationDoc {
        config: cfg.clone(),
        seeds,
        tables,
    };
    write_json(&dir.join("ablation.json"), &doc)?;
    write_ablation_csv(&dir.join("ablation.csv"), &doc)?;
    Ok(AblateOutput { dir, doc })
}

fn write_ablation_csv(path: &Path, doc: &AblationDoc) -> Result<()> {
    let multi = doc.seeds.len() > 1;
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["label", "virtual_data", "eca", "freeze", "stage2"].map(String::from).to_vec();
    header.extend(doc.seeds.iter().map(|s| format!("seed_{s}")));
    if multi {
        header.extend(["mean".to_string(), "spread".to_string()]);
    }
    w.write_record(&header)?;
    for (i, row) in doc.tables[0].rows.iter().enumerate() {
        let f = row.flags;
        let mut rec: Vec<String> = vec![row.label.clone()];
        rec.extend([f.use_virtual_data, f.use_eca, f.freeze_head, f.stage2].map(|b| b.to_string()));
        let averages: Vec<f64> = doc.tables.iter().map(|t| t.rows[i].average).collect();
        rec.extend(averages.iter().map(f64::to_string));
        if multi {
            let s = summarize(&averages);
            rec.extend([s.mean.to_string(), s.std.to_string()]);
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(CliError::io(path))
}
