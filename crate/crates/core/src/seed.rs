//! Deterministic seed derivation.
//!
//! Every stochastic component draws from its own ChaCha stream whose seed is a
//! hash of the master seed and a label path, so results never depend on
//! scheduling order.

use sha2::{Digest, Sha256};

/// Hashes `(master, label, a, b)` into a 64-bit seed.
pub fn derive_seed(master: u64, label: &str, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Hex SHA-256 of arbitrary bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
