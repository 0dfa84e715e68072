//! Seed derivation for reproducible parallel streams.
//!
//! Every random stream in the crate is a `ChaCha8Rng` whose seed is a pure
//! function of a master seed and a list of integer labels, so results do not
//! depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with labels into a child seed.
pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for &l in labels {
        h = splitmix64(h ^ splitmix64(l.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// A generator for the stream identified by `(master, labels)`.
pub fn stream(master: u64, labels: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, labels))
}
