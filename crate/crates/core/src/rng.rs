//! Reproducible random streams.
//!
//! All randomness flows through ChaCha20 keyed by a 64-bit seed, with the
//! 64-bit stream selector used to split independent sub-streams. Replica
//! seeds are derived from `(master seed, replica index)` with a SplitMix64
//! finalizer, so they are stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SimRng = ChaCha20Rng;

/// Generator identity recorded in run manifests.
pub const GENERATOR_NAME: &str = "ChaCha20Rng";
pub const GENERATOR_VERSION: &str = "rand_chacha 0.9";

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of `(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn stream(seed: u64, stream_id: u64) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
