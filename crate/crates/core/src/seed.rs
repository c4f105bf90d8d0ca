//! Seed derivation.
//!
//! Every random stream in a run is keyed by `(root seed, role tag)`. The
//! derived seed is the first eight bytes (little endian) of
//! `SHA-256(root.to_le_bytes() || tag)`, so adding a new role never shifts
//! the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(root: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// A reproducible generator for `(root, tag)`.
pub fn rng(root: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tag))
}
