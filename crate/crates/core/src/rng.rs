//! Derivation of independent, reproducible random streams.
//!
//! Every consumer (a client's train split, the server's batch order, model
//! initialization, ...) gets its own ChaCha stream whose seed is a hash of
//! the global seed and a tag path, so streams never share state and adding
//! or perturbing one consumer cannot shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. The numeric values are part of the reproducibility
/// contract; do not renumber.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Tag {
    Atlas = 1,
    ClientSpecs = 2,
    ClientTrain = 3,
    ClientTest = 4,
    Virtual = 5,
    ModelInit = 6,
    ClientOrder = 7,
    ServerOrder = 8,
    Pretrain = 9,
    Finetune = 10,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream `(seed, tag, path...)`.
pub fn derive_seed(seed: u64, tag: Tag, path: &[u64]) -> u64 {
    let mut h = mix(seed.wrapping_add(GOLDEN));
    h = mix(h ^ (tag as u64).wrapping_mul(GOLDEN));
    for &p in path {
        h = mix(h.wrapping_add(GOLDEN) ^ mix(p.wrapping_add(1)));
    }
    h
}

pub fn stream(seed: u64, tag: Tag, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, path))
}
