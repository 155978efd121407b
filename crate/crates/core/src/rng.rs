//! Seed derivation for reproducible, independently addressable random streams.
//!
//! Every trajectory (or Monte-Carlo chunk) owns a ChaCha8 stream keyed by a
//! 64-bit hash of `(master_seed, index)`, so results never depend on the order
//! or the number of workers that produced them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The stream type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the sub-stream `index` of `master_seed`.
pub fn stream_seed(master_seed: u64, index: u64) -> u64 {
    mix64(mix64(master_seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Random stream for sub-stream `index` of `master_seed`.
pub fn stream_rng(master_seed: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, index))
}

/// Random stream seeded directly from a stored 64-bit seed.
pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
