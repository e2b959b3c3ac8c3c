//! CRNN with ECA channel attention: configuration, attention math and the
//! assembled network.

mod crnn;
mod eca;

pub use crnn::{build_model, group_partition, Crnn, GroupPartition, Trace};
pub use eca::{eca_backward, eca_forward, eca_kernel_size, EcaCache};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network architecture. Every conv block is a 3x3 convolution (padding 1)
/// followed by ReLU, an optional ECA layer and max pooling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_height: usize,
    pub conv_channels: Vec<usize>,
    pub pools: Vec<(usize, usize)>,
    pub recurrent_hidden: usize,
    pub alphabet_size: usize,
    pub eca_gamma: usize,
    pub eca_b: usize,
    pub use_eca: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_height: 32,
            conv_channels: vec![16, 32, 64],
            pools: vec![(2, 2), (2, 2), (2, 1)],
            recurrent_hidden: 64,
            alphabet_size: 40,
            eca_gamma: 2,
            eca_b: 1,
            use_eca: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.conv_channels.is_empty() {
            return bad("at least one conv block is required".into());
        }
        if self.pools.len() != self.conv_channels.len() {
            return bad(format!(
                "{} conv blocks but {} pool entries",
                self.conv_channels.len(),
                self.pools.len()
            ));
        }
        if self.conv_channels.contains(&0) || self.recurrent_hidden == 0 {
            return bad("channel counts and recurrent width must be >= 1".into());
        }
        if self.alphabet_size == 0 {
            return bad("alphabet_size must be >= 1".into());
        }
        if self.eca_gamma == 0 {
            return bad("eca_gamma must be >= 1".into());
        }
        if self.pools.iter().any(|&(h, w)| h == 0 || w == 0) {
            return bad("pool sizes must be >= 1".into());
        }
        let ph = self.pool_height_product();
        if self.input_height == 0 || !self.input_height.is_multiple_of(ph) {
            return bad(format!(
                "pool heights (product {ph}) do not divide input height {}",
                self.input_height
            ));
        }
        Ok(())
    }

    pub fn pool_height_product(&self) -> usize {
        self.pools.iter().map(|p| p.0).product()
    }

    /// Horizontal downsampling factor from image columns to frames.
    pub fn pool_width_product(&self) -> usize {
        self.pools.iter().map(|p| p.1).product()
    }

    /// Number of output classes including the blank.
    pub fn num_classes(&self) -> usize {
        self.alphabet_size + 1
    }

    /// Frames produced for an image of width `width`.
    pub fn frames_for_width(&self, width: usize) -> Result<usize> {
        let pw = self.pool_width_product();
        if width == 0 || !width.is_multiple_of(pw) {
            return Err(Error::Config(format!(
                "image width {width} is not divisible by the pool width product {pw}"
            )));
        }
        Ok(width / pw)
    }

    /// ECA kernel length for each conv block.
    pub fn eca_kernel_sizes(&self) -> Vec<usize> {
        self.conv_channels
            .iter()
            .map(|&c| eca_kernel_size(c, self.eca_gamma, self.eca_b))
            .collect()
    }
}
