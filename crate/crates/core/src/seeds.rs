//! Deterministic seed derivation.
//!
//! Every randomized stage draws from its own ChaCha stream seeded by a
//! hash of the master seed and a context string, so stages stay
//! independent: adding draws to one never perturbs another.

use sha2::{Digest, Sha256};

/// Derive a stage seed from the master seed and a context label such as
/// `"kmeans/tree-17"`. Stable across platforms and releases.
pub fn derive_seed(master: u64, context: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(context.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8+ bytes"))
}
