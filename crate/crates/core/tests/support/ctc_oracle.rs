//! CTC loss against exhaustive path enumeration on small random problems,
//! plus the hand-worked examples.

use pfedcr_core::ctc::{brute_force_ctc, ctc_loss, LabelSeq};
use pfedcr_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_FRAMES: usize = 6;
pub const MAX_ALPHABET: usize = 3;
pub const TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Case {
    pub seed: u64,
    pub frames: usize,
    pub alphabet: usize,
    pub target: Vec<u32>,
    pub dynamic: f64,
    pub brute: f64,
}

impl Case {
    pub fn error(&self) -> f64 {
        (self.dynamic - self.brute).abs()
    }
}

/// Draws seeded cases until `count` feasible ones have been compared.
pub fn random_cases(count: usize) -> Vec<Case> {
    let mut cases = Vec::with_capacity(count);
    let mut seed = 0;
    while cases.len() < count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = rng.random_range(1..=MAX_FRAMES);
        let alphabet = rng.random_range(1..=MAX_ALPHABET);
        let len = rng.random_range(1..=frames);
        let target: Vec<u32> = (0..len).map(|_| rng.random_range(1..=alphabet as u32)).collect();
        let label = LabelSeq::new(target.clone()).expect("non-empty");
        let classes = alphabet + 1;
        let logits = Tensor::from_fn(&[frames, classes], |_| rng.random_range(-3.0..3.0));
        if label.min_frames() <= frames {
            let batched = logits.clone().reshape(&[frames, 1, classes]).expect("same size");
            let (dynamic, _) = ctc_loss(&batched, std::slice::from_ref(&label)).expect("feasible");
            let brute = brute_force_ctc(&logits, &label).expect("small");
            cases.push(Case { seed, frames, alphabet, target, dynamic, brute });
        }
        seed += 1;
    }
    cases
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let z: f64 = row.iter().map(|v| v.exp()).sum();
    row.iter().map(|v| v.exp() / z).collect()
}

/// The three worked examples; returns `(name, passed, detail)`.
pub fn hand_examples() -> Vec<(&'static str, bool, String)> {
    let mut out = Vec::new();
    let a = LabelSeq::new(vec![1]).expect("non-empty");

    // one frame, one symbol: a single valid alignment
    let row = [0.3, -1.1];
    let logits = Tensor::new(vec![1, 1, 2], row.to_vec()).expect("shape");
    let (loss, _) = ctc_loss(&logits, std::slice::from_ref(&a)).expect("feasible");
    let expected = -softmax(&row)[1].ln();
    out.push(("single frame", (loss - expected).abs() <= TOLERANCE, format!("{loss} vs {expected}")));

    // two frames: a a, a blank, blank a
    let rows = [[0.2, 0.9], [-0.4, 0.5]];
    let logits = Tensor::new(vec![2, 1, 2], rows.concat()).expect("shape");
    let (loss, _) = ctc_loss(&logits, &[a]).expect("feasible");
    let (p1, p2) = (softmax(&rows[0]), softmax(&rows[1]));
    let p = p1[1] * p2[1] + p1[1] * p2[0] + p1[0] * p2[1];
    let expected = -p.ln();
    out.push(("two frames", (loss - expected).abs() <= TOLERANCE, format!("{loss} vs {expected}")));

    // a repeated symbol needs a blank between, so three frames
    let aa = LabelSeq::new(vec![1, 1]).expect("non-empty");
    let logits = Tensor::new(vec![1, 1, 3], vec![0.0; 3]).expect("shape");
    let result = ctc_loss(&logits, &[aa]);
    let ok = matches!(result, Err(Error::Infeasible { required: 3, frames: 1, .. }));
    out.push(("repeat infeasible", ok, format!("{result:?}")));
    out
}
