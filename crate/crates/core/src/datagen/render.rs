//! Text-line rendering with per-client style perturbations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::atlas::{GlyphAtlas, GLYPH_WIDTH, LINE_HEIGHT};
use crate::ctc::LabelSeq;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GLYPH_SPACING: usize = 2;
pub const MAX_LINE_LEN: usize = 12;
/// Rendered widths are padded up to a multiple of this.
pub const WIDTH_MULTIPLE: usize = 4;

/// Image-style perturbation of one client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Style {
    /// Peak background shading, in `[0, 0.3]`.
    pub background_level: f64,
    /// Standard deviation of additive pixel noise, in `[0, 0.15]`.
    pub noise_sigma: f64,
    /// Ink intensity, in `[0.6, 1]`.
    pub contrast: f64,
}

impl Style {
    pub const NEUTRAL: Style = Style {
        background_level: 0.0,
        noise_sigma: 0.0,
        contrast: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("style {name} = {v} outside [{lo}, {hi}]")))
            }
        };
        check("background_level", self.background_level, 0.0, 0.3)?;
        check("noise_sigma", self.noise_sigma, 0.0, 0.15)?;
        check("contrast", self.contrast, 0.6, 1.0)
    }

    /// Uniform draw from the valid style box.
    pub fn random(rng: &mut impl Rng) -> Self {
        Style {
            background_level: rng.random_range(0.0..=0.3),
            noise_sigma: rng.random_range(0.0..=0.15),
            contrast: rng.random_range(0.6..=1.0),
        }
    }
}

impl Default for Style {
    fn default() -> Self {
        Self::NEUTRAL
    }
}

/// Width in pixels of a rendered line of `len` glyphs.
pub fn line_width(len: usize) -> usize {
    let raw = len * GLYPH_WIDTH + len.saturating_sub(1) * GLYPH_SPACING;
    raw.div_ceil(WIDTH_MULTIPLE) * WIDTH_MULTIPLE
}

/// Renders `label` as a `[1, 32, W]` image in `[0, 1]`.
///
/// Ink pixels take the value `contrast`; the background is a horizontal
/// ramp peaking at `background_level` whose direction and floor come from
/// `rng`; Gaussian noise is added last and the result clamped. The neutral
/// style consumes no randomness and reproduces the upscaled bitmaps exactly.
pub fn render_line(atlas: &GlyphAtlas, label: &LabelSeq, style: &Style, rng: &mut impl Rng) -> Result<Tensor> {
    if label.is_empty() || label.len() > MAX_LINE_LEN {
        return Err(Error::Range(format!(
            "line length {} outside [1, {MAX_LINE_LEN}]",
            label.len()
        )));
    }
    label.check_alphabet(atlas.alphabet_size())?;
    style.validate()?;
    let width = line_width(label.len());
    let mut img = vec![0f32; LINE_HEIGHT * width];
    for (i, &c) in label.symbols().iter().enumerate() {
        let x0 = i * (GLYPH_WIDTH + GLYPH_SPACING);
        for row in 0..LINE_HEIGHT {
            for col in 0..GLYPH_WIDTH {
                if atlas.ink(c, row, col) {
                    img[row * width + x0 + col] = 1.0;
                }
            }
        }
    }
    if *style != Style::NEUTRAL {
        let (floor, rising) = if style.background_level > 0.0 {
            (rng.random_range(0.0..1.0), rng.random_bool(0.5))
        } else {
            (0.0, true)
        };
        let noise = Normal::new(0.0, style.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for row in 0..LINE_HEIGHT {
            for col in 0..width {
                let pos = col as f64 / (width - 1).max(1) as f64;
                let ramp = if rising { pos } else { 1.0 - pos };
                let bg = style.background_level * (floor + (1.0 - floor) * ramp);
                let ink = img[row * width + col] as f64;
                let mut v = ink * style.contrast + (1.0 - ink) * bg;
                if style.noise_sigma > 0.0 {
                    v += noise.sample(rng);
                }
                img[row * width + col] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(vec![1, LINE_HEIGHT, width], img)
}
