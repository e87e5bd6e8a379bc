//! Seed derivation for independent, reproducible random streams.
//!
//! Every consumer of randomness (exploration, replay sampling, augmentation,
//! damping, environment episodes) draws from its own stream so that changing
//! how often one of them is used never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random source used throughout the crate.
pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a stream tag into a new seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x5EED)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream_rng(base: u64, stream: u64) -> Rng {
    rng_from_seed(derive_seed(base, stream))
}

/// Named stream tags.
pub mod streams {
    pub const EXPLORATION: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const AUGMENTATION: u64 = 3;
    pub const DAMPING: u64 = 4;
    pub const EPISODES: u64 = 5;
    pub const INIT: u64 = 6;
    pub const EVAL: u64 = 7;
}
