//! Deterministic per-stage seed derivation.
//!
//! Every randomized stage of the pipeline draws from its own RNG, seeded by
//! hashing the root seed together with a stable stage label. Stages therefore
//! stay independent: inserting a new randomized stage never perturbs the
//! draws of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit stage seed from the root seed and a stage label.
///
/// The derivation is `SHA-256(root_le_bytes || label)` truncated to the first
/// eight bytes, read little-endian. Identical inputs always produce the same
/// seed across platforms and releases.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Builds the stage RNG for `label` under `root`.
pub fn stage_rng(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label))
}
