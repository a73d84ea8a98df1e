//! Two-tier key derivation: KeyA from (identity, watchword), KeyB from
//! (KeyA, random seed), both as segments of a Vandermonde codeword, plus
//! hash-based baseline pseudonyms for comparison.
//!
//! "Mixing" is positional concatenation (identity or KeyA first), then
//! encoding by a public Vandermonde matrix; the key is a contiguous k-symbol
//! segment of the codeword at a public offset.

use crate::gf::FieldSpec;
use crate::linalg::{LinalgError, SymbolVector, VandermondeMatrix};
use md5::Md5;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha1::Sha1;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeygenError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("expected {expected} symbols, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("operation requires a network-coding key, got {0:?}")]
    SchemeMismatch(Scheme),
    #[error("watchword too short: {got} symbols, need at least {need}")]
    WatchwordTooShort { need: usize, got: usize },
    #[error("truncation to {requested} bits exceeds the {available}-bit digest")]
    TruncationOverflow { requested: usize, available: usize },
    #[error("IMSI must be a non-empty decimal digit string, got {0:?}")]
    BadImsiDigits(String),
    #[error("malformed key material: {0}")]
    MalformedKey(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    NetworkCoding,
    Md5,
    Sha1,
    Sha256,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::NetworkCoding => "network-coding",
            Scheme::Md5 => "md5",
            Scheme::Sha1 => "sha1",
            Scheme::Sha256 => "sha256",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyRole {
    KeyA,
    KeyB,
}

/// Key material: field symbols for the network-coding scheme, a truncated
/// digest for the hash baselines.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KeyMaterial {
    Symbols(SymbolVector),
    Digest(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Key {
    pub scheme: Scheme,
    pub role: KeyRole,
    pub material: KeyMaterial,
}

impl Key {
    /// Canonical byte serialization: symbols in ascending index order, each
    /// big-endian in ceil(u/8) bytes; digests verbatim.
    pub fn bytes(&self) -> Vec<u8> {
        match &self.material {
            KeyMaterial::Symbols(v) => {
                let width = v.spec().symbol_bytes();
                let mut out = Vec::with_capacity(v.len() * width);
                for &s in v.symbols() {
                    out.extend_from_slice(&s.to_be_bytes()[2 - width..]);
                }
                out
            }
            KeyMaterial::Digest(d) => d.clone(),
        }
    }

    /// Canonical lowercase-hex form used in stores and wire messages.
    pub fn hex(&self) -> String {
        hex::encode(self.bytes())
    }

    pub fn symbols(&self) -> Option<&SymbolVector> {
        match &self.material {
            KeyMaterial::Symbols(v) => Some(v),
            KeyMaterial::Digest(_) => None,
        }
    }

    /// Parses the canonical hex form back into a network-coding key.
    pub fn from_symbol_hex(spec: FieldSpec, role: KeyRole, hex_str: &str) -> Result<Key, KeygenError> {
        let bytes = hex::decode(hex_str)
            .map_err(|e| KeygenError::MalformedKey(format!("bad hex: {e}")))?;
        let width = spec.symbol_bytes();
        if bytes.is_empty() || bytes.len() % width != 0 {
            return Err(KeygenError::MalformedKey(format!(
                "material length {} is not a multiple of the {}-byte symbol width",
                bytes.len(),
                width
            )));
        }
        let mut symbols = Vec::with_capacity(bytes.len() / width);
        for chunk in bytes.chunks(width) {
            let mut v = 0u32;
            for &b in chunk {
                v = (v << 8) | b as u32;
            }
            if v >= spec.q() {
                return Err(KeygenError::MalformedKey(format!(
                    "symbol {v:#x} out of range for GF(2^{})",
                    spec.u()
                )));
            }
            symbols.push(v as u16);
        }
        Ok(Key {
            scheme: Scheme::NetworkCoding,
            role,
            material: KeyMaterial::Symbols(SymbolVector::new(spec, symbols)?),
        })
    }
}

/// Parameters of the coding scheme: code length n, key length k = n/2,
/// identity length m <= n - k, segment offset p.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeygenParams {
    spec: FieldSpec,
    n: usize,
    k: usize,
    m: usize,
    p: usize,
}

impl KeygenParams {
    pub fn new(spec: FieldSpec, n: usize, k: usize, m: usize, p: usize) -> Result<Self, KeygenError> {
        if n == 0 || n as u32 >= spec.q() {
            return Err(KeygenError::InvalidParams(format!(
                "need 0 < n < q, got n={n}, q={}",
                spec.q()
            )));
        }
        if k * 2 != n {
            return Err(KeygenError::InvalidParams(format!(
                "need k = n/2, got k={k}, n={n}"
            )));
        }
        if m == 0 || m > n - k {
            return Err(KeygenError::InvalidParams(format!(
                "need 1 <= m <= n-k, got m={m}, n-k={}",
                n - k
            )));
        }
        if p > n - k {
            return Err(KeygenError::InvalidParams(format!(
                "need p <= n-k, got p={p}, n-k={}",
                n - k
            )));
        }
        Ok(KeygenParams { spec, n, k, m, p })
    }

    /// Production defaults: u=8, n=14, k=7, m=7 (up to a 14-digit BCD IMSI).
    pub fn production_default() -> Self {
        let spec = FieldSpec::new(8).expect("u=8 supported");
        KeygenParams::new(spec, 14, 7, 7, 0).expect("defaults are valid")
    }

    pub fn spec(&self) -> FieldSpec {
        self.spec
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn with_offset(&self, p: usize) -> Result<Self, KeygenError> {
        KeygenParams::new(self.spec, self.n, self.k, self.m, p)
    }

    /// Uniform public segment offset in {0..n-k}.
    pub fn draw_offset<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..=self.n - self.k)
    }
}

/// Packs a big-endian bit string into u-bit symbols, zero-padding the tail.
fn pack_bits(bits: &[bool], spec: FieldSpec) -> Vec<u16> {
    let u = spec.u() as usize;
    bits.chunks(u)
        .map(|chunk| {
            let mut v = 0u16;
            for (i, &b) in chunk.iter().enumerate() {
                if b {
                    v |= 1 << (u - 1 - i);
                }
            }
            v
        })
        .collect()
}

/// Packs arbitrary bytes into u-bit symbols (big-endian bit order).
pub fn pack_bytes_to_symbols(bytes: &[u8], spec: FieldSpec) -> Result<SymbolVector, KeygenError> {
    let bits: Vec<bool> = bytes
        .iter()
        .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
        .collect();
    Ok(SymbolVector::new(spec, pack_bits(&bits, spec))?)
}

/// The secret identity: an IMSI digit string and its symbol encoding.
///
/// Digits are BCD-packed (4 bits each, big-endian), split into u-bit symbols,
/// zero-padded in the final symbol. Canonical and reversible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identity {
    imsi_digits: String,
    symbols: SymbolVector,
}

impl Identity {
    pub fn from_digits(digits: &str, spec: FieldSpec) -> Result<Self, KeygenError> {
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(KeygenError::BadImsiDigits(digits.to_string()));
        }
        let bits: Vec<bool> = digits
            .bytes()
            .map(|b| b - b'0')
            .flat_map(|d| (0..4).rev().map(move |i| (d >> i) & 1 == 1))
            .collect();
        Ok(Identity {
            imsi_digits: digits.to_string(),
            symbols: SymbolVector::new(spec, pack_bits(&bits, spec))?,
        })
    }

    /// Identity from raw symbols (used by the oracle's candidate enumeration).
    pub fn from_symbols(symbols: SymbolVector) -> Self {
        Identity {
            imsi_digits: String::new(),
            symbols,
        }
    }

    pub fn digits(&self) -> &str {
        &self.imsi_digits
    }

    pub fn symbols(&self) -> &SymbolVector {
        &self.symbols
    }

    /// BCD bit length of the digit string.
    pub fn bit_len(&self) -> usize {
        self.imsi_digits.len() * 4
    }
}

/// User-chosen secret, at least as long (in symbols) as the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Watchword {
    symbols: SymbolVector,
}

impl Watchword {
    pub fn new(symbols: SymbolVector) -> Self {
        Watchword { symbols }
    }

    /// Packs a passphrase into exactly `len` symbols. The phrase must carry
    /// at least `len` symbols worth of bits; extra bits are dropped.
    pub fn from_phrase(phrase: &str, spec: FieldSpec, len: usize) -> Result<Self, KeygenError> {
        let packed = pack_bytes_to_symbols(phrase.as_bytes(), spec)?;
        if packed.len() < len {
            return Err(KeygenError::WatchwordTooShort {
                need: len,
                got: packed.len(),
            });
        }
        Ok(Watchword {
            symbols: packed.segment(0, len),
        })
    }

    pub fn random<R: Rng>(rng: &mut R, spec: FieldSpec, len: usize) -> Self {
        let symbols = (0..len).map(|_| rng.gen_range(0..spec.q()) as u16).collect();
        Watchword {
            symbols: SymbolVector::new(spec, symbols).expect("in range by construction"),
        }
    }

    pub fn symbols(&self) -> &SymbolVector {
        &self.symbols
    }
}

/// Uniform random padding for tier 2, length n - k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    symbols: SymbolVector,
}

impl Seed {
    pub fn new(symbols: SymbolVector) -> Self {
        Seed { symbols }
    }

    pub fn generate<R: Rng>(rng: &mut R, spec: FieldSpec, len: usize) -> Self {
        let symbols = (0..len).map(|_| rng.gen_range(0..spec.q()) as u16).collect();
        Seed {
            symbols: SymbolVector::new(spec, symbols).expect("in range by construction"),
        }
    }

    pub fn symbols(&self) -> &SymbolVector {
        &self.symbols
    }
}

/// Tier 1: b = identity symbols (positions 1..m) followed by watchword
/// symbols (positions m+1..n).
pub fn mix_tier1(
    id: &Identity,
    w: &Watchword,
    params: &KeygenParams,
) -> Result<SymbolVector, KeygenError> {
    if id.symbols().len() != params.m() {
        return Err(KeygenError::LengthMismatch {
            expected: params.m(),
            got: id.symbols().len(),
        });
    }
    let want = params.n() - params.m();
    if w.symbols().len() != want {
        return Err(KeygenError::LengthMismatch {
            expected: want,
            got: w.symbols().len(),
        });
    }
    Ok(id.symbols().concat(w.symbols())?)
}

fn derive_segment(
    b: &SymbolVector,
    matrix: &VandermondeMatrix,
    params: &KeygenParams,
    p: usize,
    role: KeyRole,
) -> Result<Key, KeygenError> {
    if b.len() != params.n() {
        return Err(KeygenError::LengthMismatch {
            expected: params.n(),
            got: b.len(),
        });
    }
    if matrix.n() != params.n() || matrix.spec() != params.spec() {
        return Err(KeygenError::InvalidParams(format!(
            "matrix dimension {} does not match n={}",
            matrix.n(),
            params.n()
        )));
    }
    if p > params.n() - params.k() {
        return Err(KeygenError::InvalidParams(format!(
            "offset {p} > n-k = {}",
            params.n() - params.k()
        )));
    }
    let c = matrix.encode(b)?;
    Ok(Key {
        scheme: Scheme::NetworkCoding,
        role,
        material: KeyMaterial::Symbols(c.segment(p, params.k())),
    })
}

/// KeyA = c_{p+1..p+k} where c = A·b, at the params' offset p.
pub fn derive_key_a(
    b: &SymbolVector,
    matrix: &VandermondeMatrix,
    params: &KeygenParams,
) -> Result<Key, KeygenError> {
    derive_segment(b, matrix, params, params.p(), KeyRole::KeyA)
}

/// Tier 2: b' = KeyA symbols (positions 1..k) followed by seed symbols.
pub fn mix_tier2(key_a: &Key, s: &Seed, params: &KeygenParams) -> Result<SymbolVector, KeygenError> {
    if key_a.scheme != Scheme::NetworkCoding {
        return Err(KeygenError::SchemeMismatch(key_a.scheme));
    }
    let symbols = key_a
        .symbols()
        .ok_or(KeygenError::SchemeMismatch(key_a.scheme))?;
    if symbols.len() != params.k() {
        return Err(KeygenError::LengthMismatch {
            expected: params.k(),
            got: symbols.len(),
        });
    }
    let want = params.n() - params.k();
    if s.symbols().len() != want {
        return Err(KeygenError::LengthMismatch {
            expected: want,
            got: s.symbols().len(),
        });
    }
    Ok(symbols.concat(s.symbols())?)
}

/// KeyB = segment of A·b' at an independently chosen offset p'.
pub fn derive_key_b(
    b_prime: &SymbolVector,
    matrix: &VandermondeMatrix,
    params: &KeygenParams,
    p_prime: usize,
) -> Result<Key, KeygenError> {
    derive_segment(b_prime, matrix, params, p_prime, KeyRole::KeyB)
}

/// Full tier-1 + tier-2 derivation for one customer.
pub fn derive_key_b_from_secrets<R: Rng>(
    id: &Identity,
    w: &Watchword,
    matrix: &VandermondeMatrix,
    params: &KeygenParams,
    rng: &mut R,
) -> Result<(Key, Key), KeygenError> {
    let b = mix_tier1(id, w, params)?;
    let key_a = derive_key_a(&b, matrix, params)?;
    let seed = Seed::generate(rng, params.spec(), params.n() - params.k());
    let b_prime = mix_tier2(&key_a, &seed, params)?;
    let p_prime = params.draw_offset(rng);
    let key_b = derive_key_b(&b_prime, matrix, params, p_prime)?;
    Ok((key_a, key_b))
}

/// Hash baseline: the first `out_bits` of digest(input). Trailing bits of the
/// last byte are masked to zero when out_bits is not byte-aligned.
pub fn hash_pseudonym(input: &[u8], algo: Scheme, out_bits: usize) -> Result<Key, KeygenError> {
    let digest: Vec<u8> = match algo {
        Scheme::Md5 => Md5::digest(input).to_vec(),
        Scheme::Sha1 => Sha1::digest(input).to_vec(),
        Scheme::Sha256 => Sha256::digest(input).to_vec(),
        Scheme::NetworkCoding => {
            return Err(KeygenError::SchemeMismatch(Scheme::NetworkCoding));
        }
    };
    if out_bits == 0 || out_bits > digest.len() * 8 {
        return Err(KeygenError::TruncationOverflow {
            requested: out_bits,
            available: digest.len() * 8,
        });
    }
    let nbytes = out_bits.div_ceil(8);
    let mut material = digest[..nbytes].to_vec();
    let spare = nbytes * 8 - out_bits;
    if spare > 0 {
        let last = material.last_mut().expect("nbytes >= 1");
        *last &= 0xFFu8 << spare;
    }
    Ok(Key {
        scheme: algo,
        role: KeyRole::KeyA,
        material: KeyMaterial::Digest(material),
    })
}
