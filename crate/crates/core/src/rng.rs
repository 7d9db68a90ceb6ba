//! Named random substreams derived from one master seed.
//!
//! Every consumer of randomness (initialization, fold assignment, batching,
//! synthesis) asks for its own stream by name, so adding a draw in one place
//! never shifts the numbers another place sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// SHA-256 of the little-endian seed followed by the UTF-8 name.
pub fn substream_key(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(substream_key(seed, name))
}

/// A `u64` derived from the named stream, for APIs that take a plain seed.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let k = substream_key(seed, name);
    u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
