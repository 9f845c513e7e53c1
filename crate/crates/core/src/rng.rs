//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream whose seed is derived from
//! a base seed plus a path of indices (epoch, sample, augmentation pass, ...),
//! so results do not depend on iteration order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a path of stream indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// A stream for the given base seed and index path.
pub fn stream(base: u64, path: &[u64]) -> Rng {
    seeded(derive_seed(base, path))
}

/// Stream tags, so that e.g. the shuffle stream of epoch 3 never collides
/// with the augmentation stream of sample 3.
pub mod tag {
    pub const SHUFFLE: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const HEAD_INIT: u64 = 3;
    pub const ENCODER_INIT: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const LABEL_NOISE: u64 = 6;
    pub const PERTURB: u64 = 7;
    pub const SYNTH: u64 = 8;
    pub const CLASSIFIER: u64 = 9;
    pub const FINETUNE: u64 = 10;
}
