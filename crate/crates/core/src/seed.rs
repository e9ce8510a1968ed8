//! Sub-seed derivation so that one top-level seed drives every random stream.

use sha2::{Digest, Sha256};

/// Deterministic 64-bit seed for the stream named `label`.
pub fn derive_seed(top: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(top.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_label_sensitive() {
        assert_eq!(derive_seed(7, "init"), derive_seed(7, "init"));
        assert_ne!(derive_seed(7, "init"), derive_seed(7, "sampler"));
        assert_ne!(derive_seed(7, "init"), derive_seed(8, "init"));
    }
}
