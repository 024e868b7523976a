//! Seed derivation.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by the run
//! seed plus a path of integers (purpose tag, subset, round, ...). Streams
//! never depend on execution order, so subsets can be processed in any
//! order or in parallel with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags used as the first element of a derivation path.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const EXTRACT: u64 = 2;
    pub const PLAN: u64 = 3;
    pub const RETRAIN: u64 = 4;
    pub const DATA: u64 = 5;
    pub const SPLIT: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed and a derivation path into a single 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn derive(seed: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_key(seed, path))
}
