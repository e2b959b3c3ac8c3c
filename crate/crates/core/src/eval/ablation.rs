//! Component ablation over the personalized algorithm's switches.

use serde::{Deserialize, Serialize};

use crate::datagen::{ClientData, Dataset};
use crate::error::Result;
use crate::fedsim::{run_pfedcr, AblationFlags, Algorithm, RunOutput, TrainConfig};
use crate::model::ModelConfig;

/// The five flag combinations, each adding one component to the previous
/// row, labeled for reports.
pub fn ablation_rows() -> [(&'static str, AblationFlags); 5] {
    let f = |use_virtual_data, use_eca, freeze_head, stage2| AblationFlags {
        use_virtual_data,
        use_eca,
        freeze_head,
        stage2,
    };
    [
        ("fedavg-equivalent", f(false, false, false, false)),
        ("+virtual", f(true, false, false, false)),
        ("+eca", f(true, true, false, false)),
        ("+freeze", f(true, true, true, false)),
        ("+stage2", f(true, true, true, true)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub flags: AblationFlags,
    /// Final-round accuracy of each client's reported model.
    pub accuracies: Vec<f64>,
    pub average: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Runs every row under `base` (same seed and data); returns the table and
/// the runs in row order.
pub fn run_ablation(
    base: &TrainConfig,
    model_cfg: &ModelConfig,
    clients: &[ClientData],
    virtual_data: Option<&Dataset>,
) -> Result<(AblationTable, Vec<RunOutput>)> {
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (label, flags) in ablation_rows() {
        let cfg = TrainConfig {
            algorithm: Algorithm::PFedCr,
            flags,
            ..base.clone()
        };
        let out = run_pfedcr(&cfg, model_cfg, clients, virtual_data)?;
        let report = out.final_report();
        rows.push(AblationRow {
            label: label.to_string(),
            flags,
            accuracies: report.clients.iter().map(|c| c.seq_acc).collect(),
            average: report.mean_accuracy(),
        });
        runs.push(out);
    }
    Ok((AblationTable { rows }, runs))
}
