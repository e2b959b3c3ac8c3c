//! Per-round metrics: long-format CSV (`round,client,algorithm,metric,value`)
//! and a JSON mirror carrying the full reports and the effective config.

use std::fs;
use std::path::Path;

use pfedcr_core::eval::RoundReport;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const CSV_HEADER: [&str; 5] = ["round", "client", "algorithm", "metric", "value"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub round: usize,
    pub client: usize,
    pub algorithm: String,
    pub metric: String,
    pub value: f64,
}

/// One row per (report, client, metric), in report then client order.
pub fn rows(reports: &[RoundReport]) -> Vec<MetricRow> {
    let mut out = Vec::new();
    for r in reports {
        for (k, c) in r.clients.iter().enumerate() {
            for (metric, value) in [("seq_acc", c.seq_acc), ("mean_ctc_loss", c.mean_ctc_loss)] {
                out.push(MetricRow {
                    round: r.round,
                    client: k,
                    algorithm: r.algorithm.to_string(),
                    metric: metric.into(),
                    value,
                });
            }
        }
    }
    out
}

pub fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            detail: format!("unexpected header {header:?}"),
        });
    }
    Ok(r.deserialize().collect::<Result<Vec<MetricRow>, _>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub reports: Vec<RoundReport>,
}

pub fn write_json(path: &Path, config: &ExperimentConfig, reports: &[RoundReport]) -> Result<()> {
    let doc = MetricsDoc {
        seed: config.seed,
        config: config.clone(),
        reports: reports.to_vec(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(format!("json: {e}")))?;
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

pub fn read_json(path: &Path) -> Result<MetricsDoc> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
