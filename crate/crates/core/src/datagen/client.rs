//! Long-tailed non-iid client corpora and the balanced virtual corpus.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::atlas::GlyphAtlas;
use super::render::{render_line, Style};
use super::{Dataset, Sample};
use crate::ctc::LabelSeq;
use crate::error::{Error, Result};
use crate::rng::{stream, Tag};

pub const ZIPF_EXPONENT: f64 = 1.2;
pub const MIN_LINE_CHARS: usize = 3;
pub const MAX_LINE_CHARS: usize = 10;

/// Normalized Zipf weights `r^-s` for ranks `1..=n`.
pub fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-exponent)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Generation recipe of one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    /// Names the client's private random streams.
    pub client_id: u64,
    /// Characters in decreasing-frequency order; a permutation of `[1, A]`.
    pub permutation: Vec<u32>,
    /// How many of the top-ranked characters may occur in the train split.
    /// The remaining ranks appear only at test time.
    pub train_chars: usize,
    pub style: Style,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_exponent")]
    pub zipf_exponent: f64,
}

fn default_exponent() -> f64 {
    ZIPF_EXPONENT
}

impl ClientSpec {
    pub fn alphabet_size(&self) -> usize {
        self.permutation.len()
    }

    pub fn validate(&self, alphabet_size: usize) -> Result<()> {
        let mut seen = vec![false; alphabet_size];
        for &c in &self.permutation {
            let slot = (c as usize).checked_sub(1).and_then(|i| seen.get_mut(i));
            match slot {
                Some(s) if !*s => *s = true,
                _ => {
                    return Err(Error::Config(format!(
                        "client {}: permutation is not a permutation of 1..={alphabet_size}",
                        self.client_id
                    )))
                }
            }
        }
        if self.permutation.len() != alphabet_size {
            return Err(Error::Config(format!(
                "client {}: permutation has {} entries, alphabet has {alphabet_size}",
                self.client_id,
                self.permutation.len()
            )));
        }
        if self.train_chars == 0 || self.train_chars > alphabet_size {
            return Err(Error::Config(format!(
                "client {}: train_chars must be in 1..={alphabet_size}",
                self.client_id
            )));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config(format!("client {}: n_train and n_test must be >= 1", self.client_id)));
        }
        if !(self.zipf_exponent > 0.0) {
            return Err(Error::Config("zipf exponent must be positive".into()));
        }
        self.style.validate()
    }

    /// Test-time character distribution indexed by `c - 1`: Zipf over the
    /// permutation, positive everywhere, summing to 1.
    pub fn char_weights(&self) -> Vec<f64> {
        self.weights_over(self.alphabet_size())
    }

    /// Train-time distribution: the Zipf law restricted to the first
    /// `train_chars` ranks and renormalized.
    pub fn train_weights(&self) -> Vec<f64> {
        self.weights_over(self.train_chars)
    }

    /// Characters that can occur in the train split.
    pub fn train_alphabet(&self) -> &[u32] {
        &self.permutation[..self.train_chars]
    }

    fn weights_over(&self, ranks: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.alphabet_size()];
        for (&c, z) in self.permutation.iter().zip(zipf_weights(ranks, self.zipf_exponent)) {
            w[c as usize - 1] = z;
        }
        w
    }
}

/// `clients` specs with distinct frequency orders and styles.
///
/// A global shuffle of the alphabet is cut into consecutive (cyclic) chunks
/// of `A - round(coverage * A)` characters; chunk `k` is withheld from
/// client `k`'s train split and placed at the bottom of its frequency order.
/// The union of the train alphabets must still cover `[1, A]`.
pub fn auto_client_specs(
    alphabet_size: usize,
    clients: usize,
    n_train: usize,
    n_test: usize,
    train_coverage: f64,
    seed: u64,
) -> Result<Vec<ClientSpec>> {
    if alphabet_size == 0 || clients == 0 {
        return Err(Error::Config("alphabet_size and clients must be >= 1".into()));
    }
    if !(train_coverage > 0.0 && train_coverage <= 1.0) {
        return Err(Error::Config(format!("train_coverage {train_coverage} outside (0, 1]")));
    }
    let train_chars = ((train_coverage * alphabet_size as f64).round() as usize).clamp(1, alphabet_size);
    let withheld = alphabet_size - train_chars;
    let mut global: Vec<u32> = (1..=alphabet_size as u32).collect();
    global.shuffle(&mut stream(seed, Tag::ClientSpecs, &[]));
    let mut specs = Vec::with_capacity(clients);
    let mut covered = vec![false; alphabet_size];
    for k in 0..clients {
        let mut rng = stream(seed, Tag::ClientSpecs, &[k as u64]);
        let excluded: Vec<u32> = (0..withheld).map(|i| global[(k * withheld + i) % alphabet_size]).collect();
        let mut included: Vec<u32> = global.iter().copied().filter(|c| !excluded.contains(c)).collect();
        let mut excluded = excluded;
        included.shuffle(&mut rng);
        excluded.shuffle(&mut rng);
        for &c in &included {
            covered[c as usize - 1] = true;
        }
        included.extend(excluded);
        specs.push(ClientSpec {
            client_id: k as u64,
            permutation: included,
            train_chars,
            style: Style::random(&mut rng),
            n_train,
            n_test,
            zipf_exponent: ZIPF_EXPONENT,
        });
    }
    if covered.contains(&false) {
        return Err(Error::Config(format!(
            "train_coverage {train_coverage} with {clients} client(s) leaves characters absent from every train split"
        )));
    }
    Ok(specs)
}

/// Splits every spec into `copies` clients sharing its character law and
/// style, each with its own streams and `1/copies` of the samples.
pub fn replicate_specs(specs: &[ClientSpec], copies: usize) -> Result<Vec<ClientSpec>> {
    if copies == 0 {
        return Err(Error::Config("copies must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(specs.len() * copies);
    for s in specs {
        for r in 0..copies {
            out.push(ClientSpec {
                client_id: s.client_id * copies as u64 + r as u64,
                n_train: (s.n_train / copies).max(1),
                n_test: (s.n_test / copies).max(1),
                ..s.clone()
            });
        }
    }
    Ok(out)
}

/// Train and test splits of one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    pub train: Dataset,
    pub test: Dataset,
}

fn draw_split(
    atlas: &GlyphAtlas,
    weights: &[f64],
    style: &Style,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    let chars = WeightedIndex::new(weights).map_err(|e| Error::Config(format!("character weights: {e}")))?;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let len = rng.random_range(MIN_LINE_CHARS..=MAX_LINE_CHARS);
        let label = LabelSeq::new((0..len).map(|_| chars.sample(rng) as u32 + 1).collect())?;
        let image = render_line(atlas, &label, style, rng)?;
        samples.push(Sample { image, label });
    }
    Dataset::new(samples, atlas.alphabet_size())
}

/// Draws a client's corpus. Train and test come from separate streams keyed
/// by `(seed, client_id)`, so other clients' specs cannot influence them.
pub fn sample_client_dataset(spec: &ClientSpec, atlas: &GlyphAtlas, seed: u64) -> Result<ClientData> {
    spec.validate(atlas.alphabet_size())?;
    let mut train_rng = stream(seed, Tag::ClientTrain, &[spec.client_id]);
    let mut test_rng = stream(seed, Tag::ClientTest, &[spec.client_id]);
    Ok(ClientData {
        train: draw_split(atlas, &spec.train_weights(), &spec.style, spec.n_train, &mut train_rng)?,
        test: draw_split(atlas, &spec.char_weights(), &spec.style, spec.n_test, &mut test_rng)?,
    })
}

/// Character-balanced neutral-style corpus for the server.
///
/// Characters are dealt from successive shuffled passes over the alphabet,
/// so every character is equally likely at each position and no two counts
/// differ by more than one.
pub fn build_virtual_balanced(atlas: &GlyphAtlas, n_lines: usize, seed: u64) -> Result<Dataset> {
    let a = atlas.alphabet_size();
    if n_lines < a {
        return Err(Error::Config(format!("virtual corpus needs at least {a} lines, got {n_lines}")));
    }
    let mut rng = stream(seed, Tag::Virtual, &[]);
    let mut deck: Vec<u32> = Vec::new();
    let mut samples = Vec::with_capacity(n_lines);
    for _ in 0..n_lines {
        let len = rng.random_range(MIN_LINE_CHARS..=MAX_LINE_CHARS);
        let mut symbols = Vec::with_capacity(len);
        for _ in 0..len {
            if deck.is_empty() {
                deck = (1..=a as u32).collect();
                deck.shuffle(&mut rng);
            }
            symbols.push(deck.pop().expect("refilled above"));
        }
        let label = LabelSeq::new(symbols)?;
        let image = render_line(atlas, &label, &Style::NEUTRAL, &mut rng)?;
        samples.push(Sample { image, label });
    }
    Dataset::new(samples, a)
}
