//! Deterministic derivation of independent RNG sub-streams from one master
//! seed, so that e.g. environment placement draws can never shift target
//! motion draws or training-time sampling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; a high-quality 64-bit mixer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `parent` and a stream `tag`.
///
/// Distinct tags yield decorrelated streams; the same (parent, tag) pair
/// always yields the same child.
pub fn substream(parent: u64, tag: u64) -> u64 {
    mix(parent ^ mix(tag))
}

/// Convenience: a ChaCha8 RNG seeded from a derived sub-stream.
pub fn stream_rng(parent: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(parent, tag))
}

/// Well-known top-level stream tags used by the harness and trainer.
pub mod tags {
    /// Environment instance streams (offset by env index).
    pub const ENV: u64 = 0x1000;
    /// Gradient-phase sampling (batch indices, action noise, permutations).
    pub const TRAIN: u64 = 0x2000;
    /// Collection-time action noise and warmup actions.
    pub const COLLECT: u64 = 0x3000;
    /// Evaluation episode seeds.
    pub const EVAL: u64 = 0x4000;
    /// Network parameter initialization.
    pub const INIT: u64 = 0x5000;
}
