use sha2::{Digest, Sha256};

/// Stable 64-bit digest of a sequence of byte strings.
///
/// Parts are length-prefixed so that `["ab", "c"]` and `["a", "bc"]` differ.
pub(crate) fn stable_hash64<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_distinguishes_splits() {
        let a = stable_hash64([b"ab".as_slice(), b"c".as_slice()]);
        let b = stable_hash64([b"a".as_slice(), b"bc".as_slice()]);
        assert_ne!(a, b);
        assert_eq!(a, stable_hash64([b"ab".as_slice(), b"c".as_slice()]));
    }
}
