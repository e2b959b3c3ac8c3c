//! Accuracy metrics, frequency-bucket analysis, cross-client evaluation and
//! the ablation runner.

mod ablation;
mod align;

pub use ablation::{ablation_rows, run_ablation, AblationRow, AblationTable};
pub use align::{aligned_matches, edit_distance};

use serde::{Deserialize, Serialize};

use crate::ctc::{ctc_loss, greedy_decode_column, LabelSeq};
use crate::datagen::{BucketSet, Dataset};
use crate::error::{Error, Result};
use crate::fedsim::Algorithm;
use crate::model::Crnn;
use crate::params::ParamSet;

/// Greedy decode and CTC loss of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub decoded: LabelSeq,
    pub loss: f64,
}

/// Runs `params` over every sample of `data`.
pub fn predict(model: &Crnn, params: &ParamSet, data: &Dataset) -> Result<Vec<Prediction>> {
    data.samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let logits = model.forward(params, &s.batch())?;
            let (loss, _) = ctc_loss(&logits, std::slice::from_ref(&s.label)).map_err(|e| match e {
                Error::Infeasible { target_len, required, frames, .. } => Error::Infeasible {
                    sample: i,
                    target_len,
                    required,
                    frames,
                },
                other => other,
            })?;
            Ok(Prediction {
                decoded: greedy_decode_column(&logits, 0)?,
                loss,
            })
        })
        .collect()
}

/// Fraction of samples whose greedy decode equals the label exactly.
pub fn sequence_accuracy(model: &Crnn, params: &ParamSet, data: &Dataset) -> Result<f64> {
    let preds = predict(model, params, data)?;
    exact_match_rate(data, &preds)
}

/// Fraction of `preds` equal to the labels of `data`, in order.
pub fn exact_match_rate(data: &Dataset, preds: &[Prediction]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let hits = data
        .samples()
        .iter()
        .zip(preds)
        .filter(|(s, p)| s.label == p.decoded)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Correct/total character counts of one frequency bucket.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub correct: u64,
    pub total: u64,
}

impl BucketCount {
    /// `None` when the bucket holds no characters.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Per-character accuracy grouped by each character's train-split
/// frequency. Characters whose frequency no bucket covers are skipped.
pub fn bucket_counts(
    data: &Dataset,
    preds: &[Prediction],
    train_freq: &[u64],
    buckets: &BucketSet,
) -> Result<Vec<BucketCount>> {
    if train_freq.len() != data.alphabet_size() {
        return Err(Error::shape(
            "bucket accuracy",
            format!("{} frequencies for an alphabet of {}", train_freq.len(), data.alphabet_size()),
        ));
    }
    let mut counts = vec![BucketCount::default(); buckets.len()];
    for (s, p) in data.samples().iter().zip(preds) {
        let truth = s.label.symbols();
        for (&c, hit) in truth.iter().zip(aligned_matches(truth, p.decoded.symbols())) {
            if let Some(b) = buckets.index_of(train_freq[c as usize - 1]) {
                counts[b].total += 1;
                counts[b].correct += u64::from(hit);
            }
        }
    }
    Ok(counts)
}

pub fn char_bucket_accuracy(
    model: &Crnn,
    params: &ParamSet,
    data: &Dataset,
    train_freq: &[u64],
    buckets: &BucketSet,
) -> Result<Vec<Option<f64>>> {
    let preds = predict(model, params, data)?;
    Ok(bucket_counts(data, &preds, train_freq, buckets)?
        .iter()
        .map(BucketCount::accuracy)
        .collect())
}

/// Entry `(i, j)` is the accuracy of model `i` on dataset `j`.
pub fn cross_client_matrix(model: &Crnn, models: &[ParamSet], datasets: &[&Dataset]) -> Result<Vec<Vec<f64>>> {
    if models.len() != datasets.len() {
        return Err(Error::Config(format!(
            "{} models but {} datasets",
            models.len(),
            datasets.len()
        )));
    }
    models
        .iter()
        .map(|m| datasets.iter().map(|d| sequence_accuracy(model, m, d)).collect())
        .collect()
}

/// Mean of the off-diagonal entries of a square matrix (0 when `K = 1`).
pub fn off_diagonal_mean(matrix: &[Vec<f64>]) -> f64 {
    let k = matrix.len();
    if k < 2 {
        return 0.0;
    }
    let sum: f64 = (0..k)
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| matrix[i][j])
        .sum();
    sum / (k * (k - 1)) as f64
}

/// Own-test-set metrics of one client's evaluated model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub seq_acc: f64,
    pub mean_ctc_loss: f64,
}

/// Metrics emitted after an evaluated round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub algorithm: Algorithm,
    pub clients: Vec<ClientMetrics>,
    /// `cross[i][j]`: model of client `i` on the test split of client `j`.
    pub cross: Option<Vec<Vec<f64>>>,
    /// `buckets[k][b]`: character counts of client `k` in bucket `b`.
    pub buckets: Option<Vec<Vec<BucketCount>>>,
}

impl RoundReport {
    pub fn mean_accuracy(&self) -> f64 {
        self.clients.iter().map(|c| c.seq_acc).sum::<f64>() / self.clients.len() as f64
    }

    /// Checks accuracy ranges and that the cross diagonal agrees with the
    /// per-client figures.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !self.clients.iter().all(|c| in_unit(c.seq_acc)) {
            return Err(Error::Numeric(format!("round {}: accuracy outside [0, 1]", self.round)));
        }
        if let Some(cross) = &self.cross {
            for (k, row) in cross.iter().enumerate() {
                if !row.iter().all(|&v| in_unit(v)) || row.get(k) != Some(&self.clients[k].seq_acc) {
                    return Err(Error::Numeric(format!(
                        "round {}: cross matrix row {k} disagrees with client metrics",
                        self.round
                    )));
                }
            }
        }
        Ok(())
    }
}

/// What to compute when evaluating a round.
#[derive(Clone, Debug, Default)]
pub struct EvalRequest<'a> {
    pub cross: bool,
    pub buckets: Option<&'a BucketSet>,
}

/// Evaluates client `k`'s model `models[k]` on every client's test split as
/// requested. `train_freqs[k]` is client `k`'s train-split frequency table.
pub fn evaluate_round(
    model: &Crnn,
    round: usize,
    algorithm: Algorithm,
    models: &[&ParamSet],
    tests: &[&Dataset],
    train_freqs: &[&[u64]],
    request: &EvalRequest<'_>,
) -> Result<RoundReport> {
    let k = models.len();
    let mut clients = Vec::with_capacity(k);
    let mut cross = request.cross.then(|| vec![vec![0.0; k]; k]);
    let mut buckets = request.buckets.map(|_| Vec::with_capacity(k));
    for (i, params) in models.iter().enumerate() {
        let preds = predict(model, params, tests[i])?;
        let acc = exact_match_rate(tests[i], &preds)?;
        let loss = preds.iter().map(|p| p.loss).sum::<f64>() / preds.len() as f64;
        clients.push(ClientMetrics {
            seq_acc: acc,
            mean_ctc_loss: loss,
        });
        if let (Some(table), Some(set)) = (buckets.as_mut(), request.buckets) {
            table.push(bucket_counts(tests[i], &preds, train_freqs[i], set)?);
        }
        if let Some(m) = cross.as_mut() {
            for (j, test) in tests.iter().enumerate() {
                m[i][j] = if j == i { acc } else { sequence_accuracy(model, params, test)? };
            }
        }
    }
    let report = RoundReport {
        round,
        algorithm,
        clients,
        cross,
        buckets,
    };
    report.validate()?;
    Ok(report)
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    if values.is_empty() {
        return Summary { mean: f64::NAN, std: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Summary { mean, std: var.sqrt() }
}
