//! Shared fixtures for the benchmarks: the desk-scale recognizer and a
//! small rendered corpus.

use pfedcr_core::datagen::{auto_client_specs, sample_client_dataset, ClientData, GlyphAtlas};
use pfedcr_core::ModelConfig;

pub const ALPHABET: usize = 40;

pub fn desk_model() -> ModelConfig {
    ModelConfig {
        conv_channels: vec![8, 16, 32],
        recurrent_hidden: 32,
        alphabet_size: ALPHABET,
        ..ModelConfig::default()
    }
}

/// One client's corpus with `lines` training lines.
pub fn client(lines: usize) -> ClientData {
    let atlas = GlyphAtlas::generate(ALPHABET, 0).expect("atlas");
    let spec = auto_client_specs(ALPHABET, 1, lines, 4, 1.0, 0).expect("spec").remove(0);
    sample_client_dataset(&spec, &atlas, 0).expect("corpus")
}
