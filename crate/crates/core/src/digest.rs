//! SHA-256 helpers for content addressing.

use sha2::{Digest, Sha256};
use std::io;
use std::path::Path;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a sequence of fields. Each field is length-prefixed so that
/// field boundaries cannot be shifted between inputs.
#[derive(Default)]
pub struct FieldDigest(Sha256);

impl FieldDigest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, bytes: impl AsRef<[u8]>) -> Self {
        let bytes = bytes.as_ref();
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn hex(self) -> String {
        hex::encode(self.0.finalize())
    }
}

pub fn file_sha256(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_boundaries_matter() {
        let a = FieldDigest::new().field("ab").field("c").hex();
        let b = FieldDigest::new().field("a").field("bc").hex();
        assert_ne!(a, b);
        assert_eq!(a.len(), 64);
    }
}
