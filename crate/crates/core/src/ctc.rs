//! Connectionist Temporal Classification: log-space forward-backward loss
//! and gradient, greedy best-path decoding, and a brute-force alignment
//! enumerator used as a test oracle.
//!
//! Class index 0 is the blank; labels use `1..=A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BLANK: u32 = 0;

/// Ground-truth or decoded symbol sequence; never contains the blank.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSeq(Vec<u32>);

impl LabelSeq {
    pub fn new(symbols: Vec<u32>) -> Result<Self> {
        if symbols.contains(&BLANK) {
            return Err(Error::Range("label contains the blank symbol 0".into()));
        }
        Ok(Self(symbols))
    }

    /// Checks every symbol lies in `1..=alphabet_size`.
    pub fn check_alphabet(&self, alphabet_size: usize) -> Result<()> {
        match self.0.iter().find(|&&s| s as usize > alphabet_size) {
            Some(s) => Err(Error::Range(format!("symbol {s} outside alphabet 1..={alphabet_size}"))),
            None => Ok(()),
        }
    }

    pub fn symbols(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Minimum number of frames able to emit this label: one per symbol
    /// plus a separating blank between each pair of repeated symbols.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

impl From<LabelSeq> for Vec<u32> {
    fn from(l: LabelSeq) -> Self {
        l.0
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|x| *x -= z);
    }
    out
}

/// Negative log-likelihood and its gradient w.r.t. the logits of one
/// sample. `logits` is `[frames, classes]`; everything runs in 64-bit.
fn sample_loss(logits: &[f64], frames: usize, classes: usize, target: &LabelSeq, sample: usize) -> Result<(f64, Vec<f64>)> {
    if target.is_empty() {
        return Err(Error::Range(format!("sample {sample}: empty target")));
    }
    target.check_alphabet(classes - 1)?;
    let required = target.min_frames();
    if frames < required {
        return Err(Error::Infeasible {
            sample,
            target_len: target.len(),
            required,
            frames,
        });
    }
    let lp = log_softmax_rows(logits, classes);
    let ext: Vec<usize> = std::iter::once(BLANK as usize)
        .chain(target.symbols().iter().flat_map(|&s| [s as usize, BLANK as usize]))
        .collect();
    let states = ext.len();
    let skip = |s: usize| s >= 2 && ext[s] != BLANK as usize && ext[s] != ext[s - 2];

    let neg = f64::NEG_INFINITY;
    let mut alpha = vec![neg; frames * states];
    alpha[0] = lp[ext[0]];
    alpha[1] = lp[ext[1]];
    for t in 1..frames {
        let (prev, cur) = alpha.split_at_mut(t * states);
        let prev = &prev[(t - 1) * states..];
        for s in 0..states {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_sum_exp(acc, prev[s - 1]);
            }
            if skip(s) {
                acc = log_sum_exp(acc, prev[s - 2]);
            }
            cur[s] = if acc == neg { neg } else { acc + lp[t * classes + ext[s]] };
        }
    }
    let last = (frames - 1) * states;
    let log_p = log_sum_exp(alpha[last + states - 1], alpha[last + states - 2]);
    if !log_p.is_finite() {
        return Err(Error::Numeric(format!("sample {sample}: target probability underflowed")));
    }

    let mut beta = vec![neg; frames * states];
    beta[last + states - 1] = lp[(frames - 1) * classes + ext[states - 1]];
    beta[last + states - 2] = lp[(frames - 1) * classes + ext[states - 2]];
    for t in (0..frames - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * states);
        let cur = &mut cur[t * states..];
        for s in 0..states {
            let mut acc = next[s];
            if s + 1 < states {
                acc = log_sum_exp(acc, next[s + 1]);
            }
            if s + 2 < states && skip(s + 2) {
                acc = log_sum_exp(acc, next[s + 2]);
            }
            cur[s] = if acc == neg { neg } else { acc + lp[t * classes + ext[s]] };
        }
    }

    let mut grad = vec![0.0; frames * classes];
    let mut occupancy = vec![neg; classes];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|o| *o = neg);
        for s in 0..states {
            let v = alpha[t * states + s] + beta[t * states + s];
            if v != neg {
                let k = ext[s];
                occupancy[k] = log_sum_exp(occupancy[k], v - lp[t * classes + k]);
            }
        }
        for k in 0..classes {
            let y = lp[t * classes + k].exp();
            let occ = if occupancy[k] == neg { 0.0 } else { (occupancy[k] - log_p).exp() };
            grad[t * classes + k] = y - occ;
        }
    }
    Ok((-log_p, grad))
}

/// Mean CTC loss over a `[T', B, A+1]` batch and its gradient w.r.t. the
/// pre-softmax logits (already divided by `B`).
pub fn ctc_loss<T: Scalar>(logits: &Tensor<T>, targets: &[LabelSeq]) -> Result<(f64, Tensor<T>)> {
    logits.expect_rank("ctc_loss", 3)?;
    let (frames, batch, classes) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    if targets.len() != batch {
        return Err(Error::shape(
            "ctc_loss",
            format!("{batch} logit columns but {} targets", targets.len()),
        ));
    }
    if classes < 2 {
        return Err(Error::shape("ctc_loss", "need at least one symbol besides blank"));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    let scale = 1.0 / batch as f64;
    let mut column = vec![0.0f64; frames * classes];
    for (b, target) in targets.iter().enumerate() {
        for t in 0..frames {
            let src = &logits.data()[(t * batch + b) * classes..][..classes];
            for (dst, &v) in column[t * classes..(t + 1) * classes].iter_mut().zip(src) {
                *dst = v.as_f64();
            }
        }
        let (loss, g) = sample_loss(&column, frames, classes, target, b)?;
        total += loss;
        for t in 0..frames {
            let dst = &mut grad.data_mut()[(t * batch + b) * classes..][..classes];
            for (d, &v) in dst.iter_mut().zip(&g[t * classes..(t + 1) * classes]) {
                *d = T::of(v * scale);
            }
        }
    }
    Ok((total * scale, grad))
}

/// Largest path space [`brute_force_ctc`] agrees to enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 1_000_000;

/// Collapses repeats then strips blanks.
pub fn collapse_path(path: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Negative log-probability of `target` by summing over every length-`T'`
/// path that collapses onto it. `logits` is `[T', A+1]`.
pub fn brute_force_ctc(logits: &Tensor<f64>, target: &LabelSeq) -> Result<f64> {
    logits.expect_rank("brute_force_ctc", 2)?;
    let (frames, classes) = (logits.shape()[0], logits.shape()[1]);
    let space = (classes as u64).checked_pow(frames as u32).unwrap_or(u64::MAX);
    if space > BRUTE_FORCE_LIMIT {
        return Err(Error::Range(format!("{classes}^{frames} paths exceed the enumeration limit")));
    }
    let probs: Vec<f64> = log_softmax_rows(logits.data(), classes).iter().map(|x| x.exp()).collect();
    let mut path = vec![0u32; frames];
    let mut total = 0.0;
    for mut code in 0..space {
        let mut p = 1.0;
        for (t, slot) in path.iter_mut().enumerate() {
            let k = (code % classes as u64) as u32;
            code /= classes as u64;
            *slot = k;
            p *= probs[t * classes + k as usize];
        }
        if collapse_path(&path) == target.symbols() {
            total += p;
        }
    }
    if total == 0.0 {
        return Err(Error::Infeasible {
            sample: 0,
            target_len: target.len(),
            required: target.min_frames(),
            frames,
        });
    }
    Ok(-total.ln())
}

/// Best-path decoding of a `[T', A+1]` logit matrix: per-frame argmax (ties
/// to the lowest index), collapse repeats, drop blanks.
pub fn greedy_decode<T: Scalar>(logits: &Tensor<T>) -> Result<LabelSeq> {
    logits.expect_rank("greedy_decode", 2)?;
    let classes = logits.shape()[1];
    let path: Vec<u32> = logits
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    Ok(LabelSeq(collapse_path(&path)))
}

/// Decodes column `b` of a `[T', B, A+1]` batch.
pub fn greedy_decode_column<T: Scalar>(logits: &Tensor<T>, b: usize) -> Result<LabelSeq> {
    logits.expect_rank("greedy_decode", 3)?;
    let (frames, batch, classes) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    if b >= batch {
        return Err(Error::Range(format!("column {b} outside batch of {batch}")));
    }
    let mut column = Vec::with_capacity(frames * classes);
    for t in 0..frames {
        column.extend_from_slice(&logits.data()[(t * batch + b) * classes..][..classes]);
    }
    greedy_decode(&Tensor::new(vec![frames, classes], column)?)
}
