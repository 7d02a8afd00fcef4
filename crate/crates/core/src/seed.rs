//! Deterministic seed derivation.
//!
//! Every random choice in the pipeline is keyed off one root seed. Sub-seeds
//! are derived by mixing the root with a context tag so that independent
//! components (dataset, splits, per-node model init) draw from independent
//! streams regardless of the order they run in.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// splitmix64 finalizer; a cheap, well-distributed 64-bit mixer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a root seed and a context tag.
pub fn derive(root: u64, tag: &str) -> u64 {
    let mut h = mix(root);
    for &b in tag.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}

/// Derive a sub-seed indexed by two counters (e.g. fold and node).
pub fn derive2(root: u64, tag: &str, a: u64, b: u64) -> u64 {
    mix(mix(derive(root, tag) ^ a) ^ b)
}

/// Seeded RNG used throughout the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fold the bit patterns of a feature vector into a hash, for per-input
/// deterministic draws (same input, same stream).
pub fn hash_features(seed: u64, values: &[f64]) -> u64 {
    let mut h = mix(seed ^ 0x5bf0_3635_dcb0_b10d);
    for v in values {
        h = mix(h ^ v.to_bits());
    }
    h
}
