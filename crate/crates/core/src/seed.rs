//! Deterministic seed derivation.
//!
//! All randomness in the crate flows from one global seed. Each task derives
//! a child seed from `(parent seed, task label, index)` so that independent
//! jobs get independent, reproducible generators and partial reruns see the
//! same streams regardless of execution order.
//!
//! The derivation is FNV-1a over the parent/label/index bytes followed by
//! the SplitMix64 finalizer for avalanche. It is fixed for the life of the
//! file formats: changing it would change every experiment output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Derive the child seed for `(parent, label, index)`.
pub fn child_seed(parent: u64, label: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in parent.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    for b in index.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
    }
    // SplitMix64 finalizer.
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// The stream generator used everywhere in the crate.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
