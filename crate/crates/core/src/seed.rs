//! Named random sub-streams derived from a single experiment seed.
//!
//! A sub-stream seed is `splitmix64(seed ^ fnv1a64(label))`. Both functions
//! are fixed, so any implementation of the same scheme reproduces the same
//! streams. The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier written into configs and manifests for the generator in use.
pub const RNG_ALGORITHM: &str = "chacha8";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn substream(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(label.as_bytes()))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    rng(substream(seed, label))
}
