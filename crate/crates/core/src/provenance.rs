use std::fmt;

use sha2::{Digest, Sha256};

/// Config hash and seed stamped into every run artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Provenance {
    pub config_hash: u64,
    pub seed: u64,
}

impl Provenance {
    /// Header line for text artifacts (without the leading `# `).
    pub fn header(&self) -> String {
        self.to_string()
    }

    /// SHA-256 of length-prefixed `chunks`, folded to its first 8 bytes.
    pub fn from_chunks<'a>(seed: u64, chunks: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut h = Sha256::new();
        for c in chunks {
            h.update((c.len() as u64).to_le_bytes());
            h.update(c);
        }
        let digest = h.finalize();
        let config_hash = u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
        Self { config_hash, seed }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "percloud config={:016x} seed={}", self.config_hash, self.seed)
    }
}
