//! Two-tier network-coding pseudonyms for group location-based services.
//!
//! The scheme encodes a secret identity mixed with padding entropy through a
//! public Vandermonde matrix over GF(2^u) and uses codeword segments as keys:
//! KeyA (authentication credential, tier 1) and KeyB (location pseudonym,
//! tier 2). The crate also ships the pseudonym-exchange lifecycle (`igs`),
//! a deterministic protocol simulator with decoupled stores (`protocol`),
//! a brute-force information-theoretic security oracle (`oracle`), and a
//! benchmark harness comparing against hash-based pseudonyms (`bench`).

pub mod bench;
pub mod gf;
pub mod igs;
pub mod keygen;
pub mod linalg;
pub mod oracle;
pub mod protocol;
pub mod rng;
