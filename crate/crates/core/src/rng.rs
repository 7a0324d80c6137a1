//! Seed derivation.
//!
//! Every experiment has a single master seed. Independent streams (one per
//! covariate, replicate, individual, mask, restart, ...) are obtained by
//! mixing the stream index into the master seed with two rounds of the
//! SplitMix64 finalizer. Derivation is hierarchical: `derive(derive(s, a), b)`
//! names stream `b` inside stream `a`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `stream` under `seed`.
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Generator for stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, stream))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stream labels used across the crate so unrelated consumers never share
/// a noise stream.
pub mod streams {
    pub const COVARIATES: u64 = 0x10;
    pub const TRUTH: u64 = 0x20;
    pub const PATH: u64 = 0x30;
    pub const PRIOR: u64 = 0x40;
    pub const FIT: u64 = 0x50;
    pub const REPLICATE: u64 = 0x1_0000;
    pub const INDIVIDUAL: u64 = 0x2_0000;
    pub const MASK: u64 = 0x3_0000;
    pub const RESTART: u64 = 0x4_0000;
    pub const SWEEP: u64 = 0x5_0000;
    pub const COMBINATION: u64 = 0x60;
}
