//! Deterministic seed derivation so every random stream is addressable by
//! (base seed, purpose, index) and independent of iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(base), |acc, p| splitmix64(acc ^ splitmix64(*p)))
}

pub fn rng_for(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

// Stream tags.
pub(crate) const TAG_CHAINS: u64 = 1;
pub(crate) const TAG_ACTION_TABLE: u64 = 2;
pub(crate) const TAG_LANGUAGE_TABLE: u64 = 3;
pub(crate) const TAG_VIDEO: u64 = 4;
pub(crate) const TAG_SPLIT: u64 = 5;
pub(crate) const TAG_INIT_VAE: u64 = 10;
pub(crate) const TAG_INIT_CLASSIFIER: u64 = 11;
pub(crate) const TAG_INIT_DENOISER: u64 = 12;
pub(crate) const TAG_TRAIN_VAE: u64 = 20;
pub(crate) const TAG_TRAIN_CLASSIFIER: u64 = 21;
pub(crate) const TAG_TRAIN_DIFFUSION: u64 = 22;
pub(crate) const TAG_CONSTRAINT_EPS: u64 = 30;
pub(crate) const TAG_SAMPLER: u64 = 31;
pub(crate) const TAG_FUSION_EPS: u64 = 32;
pub(crate) const TAG_RANDOM_PLANNER: u64 = 33;
