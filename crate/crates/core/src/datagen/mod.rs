//! Synthetic text-line corpora: glyph atlas, rendering, long-tailed
//! non-iid client datasets, the server's balanced virtual dataset and
//! frequency buckets.

mod atlas;
mod buckets;
mod client;
mod render;

pub use atlas::{GlyphAtlas, GLYPH_COLS, GLYPH_ROWS, GLYPH_WIDTH, LINE_HEIGHT, SCALE};
pub use buckets::{bucket_of, Bucket, BucketSet};
pub use client::{
    auto_client_specs, build_virtual_balanced, replicate_specs, sample_client_dataset, zipf_weights,
    ClientData, ClientSpec, ZIPF_EXPONENT, MAX_LINE_CHARS, MIN_LINE_CHARS,
};
pub use render::{line_width, render_line, Style, GLYPH_SPACING, MAX_LINE_LEN, WIDTH_MULTIPLE};

use serde::{Deserialize, Serialize};

use crate::ctc::LabelSeq;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One line image `[1, 32, W]` with its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: Tensor,
    pub label: LabelSeq,
}

impl Sample {
    /// The image as a batch of one, `[1, 1, 32, W]`.
    pub fn batch(&self) -> Tensor {
        let s = self.image.shape();
        self.image
            .clone()
            .reshape(&[1, s[0], s[1], s[2]])
            .expect("same element count")
    }
}

/// Samples plus the per-character occurrence counts over them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    alphabet_size: usize,
    /// `freq[c - 1]` counts occurrences of character `c`.
    freq: Vec<u64>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, alphabet_size: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            s.label
                .check_alphabet(alphabet_size)
                .map_err(|e| Error::Range(format!("sample {i}: {e}")))?;
            let shape = s.image.shape();
            if shape.len() != 3 || shape[0] != 1 || shape[1] != LINE_HEIGHT || shape[2] % WIDTH_MULTIPLE != 0 {
                return Err(Error::shape("dataset", format!("sample {i} has image shape {shape:?}")));
            }
        }
        let freq = count(&samples, alphabet_size);
        Ok(Self {
            samples,
            alphabet_size,
            freq,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn freq(&self) -> &[u64] {
        &self.freq
    }

    /// Recounts character occurrences and checks them against the stored
    /// table.
    pub fn verify_freq(&self) -> Result<()> {
        if count(&self.samples, self.alphabet_size) == self.freq {
            Ok(())
        } else {
            Err(Error::Numeric("frequency table does not match the samples".into()))
        }
    }
}

fn count(samples: &[Sample], alphabet_size: usize) -> Vec<u64> {
    let mut freq = vec![0u64; alphabet_size];
    for s in samples {
        for &c in s.label.symbols() {
            freq[c as usize - 1] += 1;
        }
    }
    freq
}
