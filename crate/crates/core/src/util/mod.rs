//! Small numeric and I/O helpers shared across modules.

pub mod binio;
pub mod math;
pub mod rng;
pub mod stats;

use sha2::{Digest, Sha256};

/// Hex SHA-256 of a vocabulary, one token per line. Used to refuse evaluating a
/// model against a corpus it was not trained on.
pub fn vocab_hash(vocab: &[String]) -> String {
    let mut h = Sha256::new();
    for tok in vocab {
        h.update(tok.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub mod alias;
pub mod sampling;
