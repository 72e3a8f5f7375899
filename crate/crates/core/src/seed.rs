//! Deterministic hashing helpers.
//!
//! Every derived seed or hashed index in the crate goes through
//! [`hash_u64`]: SHA-256 over the parts joined with a `0x1f` (unit
//! separator) byte, first eight digest bytes read as big-endian `u64`.
//! The rule is simple enough to recompute with any SHA-256 tool.

use sha2::{Digest, Sha256};

const SEPARATOR: u8 = 0x1f;

pub fn hash_u64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([SEPARATOR]);
        }
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(bytes)
}

pub fn hash_str(parts: &[&str]) -> u64 {
    let bytes: Vec<&[u8]> = parts.iter().map(|p| p.as_bytes()).collect();
    hash_u64(&bytes)
}

/// Seed for one (trial, conversation) pair of a multi-trial run.
pub fn trial_seed(base_seed: u64, trial: usize, conversation_id: &str) -> u64 {
    hash_u64(&[
        base_seed.to_string().as_bytes(),
        trial.to_string().as_bytes(),
        conversation_id.as_bytes(),
    ])
}

/// Seed for the `index`-th independent stream derived from `base_seed`.
pub fn stream_seed(base_seed: u64, index: u64) -> u64 {
    hash_u64(&[base_seed.to_string().as_bytes(), index.to_string().as_bytes()])
}
