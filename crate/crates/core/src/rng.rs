//! Deterministic RNG substreams.
//!
//! All randomness in the library flows from one master seed through named
//! substreams, so a component test can pin an individual stream while the
//! simulator replays full runs byte-identically.

use rand_chacha::ChaCha20Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

/// Stream names used by the library. Callers may also use ad-hoc names.
pub mod streams {
    pub const KEYGEN: &str = "keygen";
    pub const IGS: &str = "igs";
    pub const SIMULATION: &str = "simulation";
    pub const ORACLE: &str = "oracle";
    pub const BENCH: &str = "bench";
}

/// Derives an independent ChaCha20 stream from (master seed, stream name).
pub fn substream(master_seed: u64, name: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(b"/");
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(seed)
}
