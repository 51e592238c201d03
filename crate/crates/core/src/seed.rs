//! Seed derivation: every sample, step and split gets its own RNG stream
//! from a parent seed and an index, so work can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed `index` of `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named sub-streams so that, e.g., train and test splits never share seeds.
pub fn stream(seed: u64, name: &str) -> u64 {
    name.bytes().fold(splitmix64(seed), |acc, b| splitmix64(acc ^ b as u64))
}
