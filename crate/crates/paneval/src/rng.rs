//! Deterministic seed derivation.
//!
//! Every random choice in the crate flows from one `u64` config seed. Distinct
//! subsystems (head init, epoch shuffles, synthetic sampling, ...) get
//! independent streams by hashing the root seed together with a fixed label,
//! so adding a consumer never perturbs the draws of an existing one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `root` and a fixed `label`.
///
/// Stable across platforms and releases: the mapping is the first eight bytes
/// (little-endian) of `SHA-256(root_le || label)`.
pub fn child_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// A deterministic RNG for the stream named by `label`.
pub fn stream(root: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(child_seed(root, label))
}
