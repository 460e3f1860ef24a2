//! Seeded random streams and stable seed derivation.
//!
//! Every consumer of randomness owns a ChaCha8 stream selected by a
//! `(seed, stream)` pair, so adding draws to one consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Named streams of a single seed.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const PROTOTYPES: u64 = 2;
    pub const GRID: u64 = 3;
    pub const NUISANCE: u64 = 4;
    pub const PROXY_NOISE: u64 = 5;
    pub const INIT: u64 = 10;
    pub const WARM_START: u64 = 11;
    pub const SHUFFLE: u64 = 12;
    pub const MONTE_CARLO: u64 = 13;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// First eight bytes (little-endian) of the SHA-256 digest of `parts`, each
/// preceded by its byte length as a little-endian `u64`.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
