//! Deterministic seed derivation.
//!
//! Every random stream in the crate is derived from a single master seed:
//! replicate `i` of a procedure uses `derive(master, i)`, and simulated
//! variates are counter-based (`unit(master, key, row)`), so results do not
//! depend on scheduling or block sizes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `master`.
pub fn derive(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// FNV-1a hash of a string key; stable across platforms and releases.
pub fn key_hash(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Counter-based uniform in the open interval (0, 1).
pub fn unit(master: u64, key: u64, row: u64) -> f64 {
    let bits = derive(derive(master, key), row) >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64
}

pub fn rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, stream))
}
