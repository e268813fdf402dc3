//! Seeded random streams.
//!
//! Every worker derives its generator from `(base seed, tag, index)` so the
//! numbers a batch sees never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags used across the pipeline.
pub mod tag {
    pub const DATA: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const BATCH_CHAIN: u64 = 3;
    pub const GP_FIT: u64 = 4;
    pub const GP_HMC: u64 = 5;
    pub const PROPOSAL: u64 = 6;
    pub const REALISATION: u64 = 7;
    pub const RESAMPLE: u64 = 8;
    pub const REFERENCE: u64 = 9;
    pub const METRICS: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag and an index into a fresh seed.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(base: u64, tag: u64, index: u64) -> SimRng {
    seeded(derive_seed(base, tag, index))
}
