//! Seed derivation for reproducible parallel Monte Carlo.
//!
//! Every record gets its own ChaCha8 stream seeded by
//! `record_seed(base, index)`, a SplitMix64 hash of the base seed and the
//! repetition index. Records therefore do not depend on which thread produced
//! them or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of repetition `index` in the batch started from `base`.
pub fn record_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// Independent child base seed, e.g. one per scan or per phase point.
pub fn child_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base.rotate_left(17) ^ splitmix64(stream ^ 0x5851_f42d_4c95_7f2d))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
