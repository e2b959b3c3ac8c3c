//! Small corpora and models for protocol tests.

use pfedcr_core::datagen::{auto_client_specs, build_virtual_balanced, sample_client_dataset, ClientData, Dataset, GlyphAtlas};
use pfedcr_core::fedsim::{Algorithm, EvalConfig, TrainConfig};
use pfedcr_core::ModelConfig;

pub const ALPHABET: usize = 5;

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        conv_channels: vec![2, 3, 4],
        recurrent_hidden: 4,
        alphabet_size: ALPHABET,
        ..ModelConfig::default()
    }
}

pub struct Corpus {
    pub clients: Vec<ClientData>,
    pub virtual_data: Dataset,
}

pub fn corpus(clients: usize, n_train: usize, seed: u64) -> Corpus {
    let atlas = GlyphAtlas::generate(ALPHABET, seed).unwrap();
    let coverage = if clients == 1 { 1.0 } else { 0.8 };
    let specs = auto_client_specs(ALPHABET, clients, n_train, 6, coverage, seed).unwrap();
    Corpus {
        clients: specs.iter().map(|s| sample_client_dataset(s, &atlas, seed).unwrap()).collect(),
        virtual_data: build_virtual_balanced(&atlas, 10, seed).unwrap(),
    }
}

pub fn config(algorithm: Algorithm, clients: usize, rounds: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        algorithm,
        clients,
        rounds,
        batch_size: 4,
        seed,
        pretrain_epochs: 2,
        eval: EvalConfig { every: 1, ..EvalConfig::default() },
        ..TrainConfig::default()
    }
}
