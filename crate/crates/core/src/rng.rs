//! Stateless seed derivation for reproducible parallel Monte Carlo.
//!
//! Every random stream in the crate is a `Xoshiro256PlusPlus` seeded from a
//! 64-bit key. Keys for path `i` of a run with base seed `s` are derived by
//! mixing `(s, i, stream)` through SplitMix64, so any subset of paths can be
//! regenerated on its own, in any order, on any number of threads.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator used by every simulation routine.
pub type SimRng = Xoshiro256PlusPlus;

/// Stream tag for the environment chain.
pub const STREAM_CHAIN: u64 = 0x6368_6169_6e00_0001;
/// Stream tag for the Brownian increments.
pub const STREAM_NOISE: u64 = 0x6e6f_6973_6500_0002;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of path `index` from the run's base seed.
pub fn path_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base_seed) ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Derives an independent sub-stream of a path seed.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(splitmix64(seed ^ stream))
}
