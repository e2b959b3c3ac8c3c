//! Procedural glyph bitmaps standing in for real character images.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Tag};

pub const GLYPH_ROWS: usize = 16;
pub const GLYPH_COLS: usize = 12;
/// Integer upscale applied when rendering (16x12 -> 32x24).
pub const SCALE: usize = 2;
pub const LINE_HEIGHT: usize = GLYPH_ROWS * SCALE;
pub const GLYPH_WIDTH: usize = GLYPH_COLS * SCALE;

const MIN_PIXELS: usize = 8;
const MIN_HAMMING: usize = 6;
const MAX_ATTEMPTS: usize = 10_000;

/// `A` distinct binary 16x12 glyphs; glyph `c` (1-based) renders character
/// `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphAtlas {
    glyphs: Vec<Vec<bool>>,
}

impl GlyphAtlas {
    pub fn generate(alphabet_size: usize, seed: u64) -> Result<Self> {
        if alphabet_size == 0 {
            return Err(Error::Config("alphabet_size must be >= 1".into()));
        }
        let mut rng = stream(seed, Tag::Atlas, &[]);
        let mut glyphs: Vec<Vec<bool>> = Vec::with_capacity(alphabet_size);
        let mut attempts = 0;
        while glyphs.len() < alphabet_size {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::Config(format!(
                    "could not generate {alphabet_size} distinct glyphs"
                )));
            }
            let g = random_glyph(&mut rng);
            let ink = g.iter().filter(|&&p| p).count();
            if ink < MIN_PIXELS {
                continue;
            }
            let far_enough = glyphs
                .iter()
                .all(|o| o.iter().zip(&g).filter(|(a, b)| a != b).count() >= MIN_HAMMING);
            if far_enough {
                glyphs.push(g);
            }
        }
        Ok(Self { glyphs })
    }

    pub fn alphabet_size(&self) -> usize {
        self.glyphs.len()
    }

    /// Row-major 16x12 bitmap of character `c` in `[1, A]`.
    pub fn bitmap(&self, c: u32) -> &[bool] {
        &self.glyphs[c as usize - 1]
    }

    /// Whether the upscaled glyph of `c` is inked at `(row, col)` of its
    /// 32x24 cell.
    pub fn ink(&self, c: u32, row: usize, col: usize) -> bool {
        self.bitmap(c)[(row / SCALE) * GLYPH_COLS + col / SCALE]
    }
}

/// Two to four strokes between random lattice points, each two pixels wide.
fn random_glyph(rng: &mut impl Rng) -> Vec<bool> {
    let mut g = vec![false; GLYPH_ROWS * GLYPH_COLS];
    let strokes = rng.random_range(2..=4);
    for _ in 0..strokes {
        let (r0, c0) = (rng.random_range(1..GLYPH_ROWS - 2), rng.random_range(1..GLYPH_COLS - 2));
        let (r1, c1) = (rng.random_range(1..GLYPH_ROWS - 2), rng.random_range(1..GLYPH_COLS - 2));
        let steps = r0.abs_diff(r1).max(c0.abs_diff(c1)).max(1);
        for s in 0..=steps {
            let r = (r0 as f64 + (r1 as f64 - r0 as f64) * s as f64 / steps as f64).round() as usize;
            let c = (c0 as f64 + (c1 as f64 - c0 as f64) * s as f64 / steps as f64).round() as usize;
            for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                g[(r + dr) * GLYPH_COLS + c + dc] = true;
            }
        }
    }
    g
}
