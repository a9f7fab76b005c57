//! Deterministic sub-seed derivation.
//!
//! Every stochastic component of a run draws from its own stream derived
//! from the single run seed, so components can be added or reordered
//! without silently perturbing each other's randomness.

/// Stream tag for model weight initialization.
pub const STREAM_MODEL_INIT: u64 = 1;
/// Stream tag for per-task mini-batch shuffling.
pub const STREAM_SHUFFLE: u64 = 2;
/// Stream tag for per-task head expansion.
pub const STREAM_EXPAND: u64 = 3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed for `stream` from a base seed.
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Derives the seed for the `index`-th member of `stream` (e.g. per task).
pub fn derive_indexed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(derive(seed, stream).wrapping_add(index))
}
