//! Deterministic RNG stream derivation.
//!
//! Every stochastic component draws from its own ChaCha8 stream whose seed is
//! derived from the run seed plus a role tag and position indices. Streams are
//! therefore independent of execution order and of how many worker threads run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role tags for sub-stream derivation (fixed, never reordered).
pub mod role {
    pub const ENV_RESET: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const MASK_SAMPLE: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const NET_INIT: u64 = 6;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of indices into one sub-seed.
pub fn subseed(seed: u64, parts: &[u64]) -> u64 {
    let mut state = seed ^ 0xA076_1D64_78BD_642F;
    let mut acc = splitmix64(&mut state);
    for &p in parts {
        state ^= p.wrapping_mul(0xE703_7ED1_A0B4_28DB);
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// A ChaCha8 stream for the given (seed, parts) address.
pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(subseed(seed, parts))
}
