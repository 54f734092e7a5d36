//! Derived rng streams.
//!
//! Every random decision in a run draws from a stream derived from
//! `(experiment_seed, purpose tag, numeric parts)`. Streams are independent
//! by construction, so e.g. the rng used to train client 17 in round 4 does
//! not shift when a different selection policy consumes more or fewer draws.
//!
//! The derivation is a fixed FNV-1a / splitmix64 combine — intentionally
//! hand-pinned rather than `std`'s `Hasher`, whose output may change across
//! Rust releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed, a purpose tag, and numeric parts.
pub fn derive_seed(root: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &root.to_le_bytes());
    h = fnv1a(h, tag.as_bytes());
    for &p in parts {
        h = fnv1a(h, &p.to_le_bytes());
    }
    splitmix64(h)
}

/// A ChaCha stream for the derived seed. ChaCha is used throughout because
/// its output is specified and portable across platforms and releases.
pub fn stream(root: u64, tag: &str, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tag, parts))
}
