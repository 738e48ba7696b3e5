//! Stable seed derivation.
//!
//! Every piece of randomness in the pipeline flows from one root seed.
//! Sub-seeds are derived by hashing (seed, purpose[, index]) with SHA-256,
//! which is stable across platforms and releases — unlike `DefaultHasher`.

use sha2::{Digest, Sha256};

/// Derive a sub-seed for a named purpose.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Derive a sub-seed for a named purpose plus an index (epoch, scene, ...).
pub fn derive_seed2(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
