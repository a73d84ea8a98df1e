//! Brute-force verification of the scheme's information-theoretic security
//! at desk scale: exact mutual information between an observed key segment
//! and any subset of source symbols, watchword-consistency counting, and a
//! distinguisher game ("do these two keys belong to the same identity?")
//! with calibrated adversaries.
//!
//! Entropies come from exact integer joint counts over the full q^n source
//! space; floats enter only at the final log2 conversion.

use crate::keygen::{
    derive_key_a, derive_key_b, mix_tier1, mix_tier2, Identity, Key, KeyRole, KeygenError,
    KeygenParams, Seed, Watchword,
};
use crate::linalg::{LinalgError, ReducedSystem, SymbolVector, VandermondeMatrix};
use rand::{Rng, RngCore};
use serde::Serialize;
use std::collections::HashMap;
use thiserror::Error;

/// Largest enumerable source space; keeps every exhaustive run under a
/// minute. Larger parameters must use [`closed_form_mi`].
pub const ENUMERATION_BOUND: u128 = 1 << 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("enumeration of {states} states exceeds the bound {ENUMERATION_BOUND}")]
    EnumerationBound { states: u128 },
    #[error("subset must be distinct positions below n={n}, got {subset:?}")]
    BadSubset { subset: Vec<usize>, n: usize },
    #[error("segment (p={p}, k={k}) out of range for n={n}")]
    BadSegment { p: usize, k: usize, n: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Keygen(#[from] KeygenError),
}

/// Exact mutual information (bits) between the observed codeword segment
/// c_{p+1..p+k} and the source symbols at `subset`, under uniform sources.
#[derive(Debug, Clone, Serialize)]
pub struct MutualInfoResult {
    pub bits: f64,
    pub q: u32,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub p: usize,
    pub subset: Vec<usize>,
    pub method: &'static str,
}

fn check_subset(subset: &[usize], n: usize) -> Result<(), OracleError> {
    let mut seen = vec![false; n];
    let bad = subset.is_empty()
        || subset
            .iter()
            .any(|&i| i >= n || std::mem::replace(&mut seen[i], true));
    if bad {
        return Err(OracleError::BadSubset {
            subset: subset.to_vec(),
            n,
        });
    }
    Ok(())
}

/// Writes the mixed-radix digits of `code` (base q, position 0 fastest).
fn decode_symbols(mut code: u64, q: u64, out: &mut [u16]) {
    for s in out.iter_mut() {
        *s = (code % q) as u16;
        code /= q;
    }
}

fn index_of(symbols: &[u16], q: u64) -> u64 {
    symbols.iter().rev().fold(0u64, |acc, &s| acc * q + s as u64)
}

/// Σ c·log2(c) over a count table.
fn sum_c_log_c<'a>(counts: impl Iterator<Item = &'a u64>) -> f64 {
    counts
        .filter(|&&c| c > 1)
        .map(|&c| c as f64 * (c as f64).log2())
        .sum()
}

/// Exhaustively measures I(c_{p+1..p+k}; b_subset) for uniform b, by exact
/// joint counts over all q^n source vectors.
pub fn brute_mutual_info(
    a: &VandermondeMatrix,
    p: usize,
    k: usize,
    subset: &[usize],
) -> Result<MutualInfoResult, OracleError> {
    let n = a.n();
    let q = a.spec().q() as u64;
    if k == 0 || k > n || p > n - k {
        return Err(OracleError::BadSegment { p, k, n });
    }
    check_subset(subset, n)?;
    let states = (q as u128).pow(n as u32);
    if states > ENUMERATION_BOUND {
        return Err(OracleError::EnumerationBound { states });
    }
    let m = subset.len();

    // Per-column contribution of each symbol value to the observed segment,
    // so the inner loop is pure XOR.
    let spec = a.spec();
    let contrib: Vec<Vec<Vec<u16>>> = (0..n)
        .map(|j| {
            (0..q as u16)
                .map(|x| (0..k).map(|r| spec.mul_raw(a.entry(p + r, j), x)).collect())
                .collect()
        })
        .collect();

    let total = states as u64;
    let mut joint: HashMap<(u64, u64), u64> = HashMap::new();
    let mut key_marginal: HashMap<u64, u64> = HashMap::new();
    let mut sub_marginal: HashMap<u64, u64> = HashMap::new();
    let mut b = vec![0u16; n];
    let mut seg = vec![0u16; k];
    for code in 0..total {
        decode_symbols(code, q, &mut b);
        seg.iter_mut().for_each(|s| *s = 0);
        for (j, &bj) in b.iter().enumerate() {
            for (r, s) in seg.iter_mut().enumerate() {
                *s ^= contrib[j][bj as usize][r];
            }
        }
        let key_idx = index_of(&seg, q);
        let sub_syms: Vec<u16> = subset.iter().map(|&i| b[i]).collect();
        let sub_idx = index_of(&sub_syms, q);
        *joint.entry((key_idx, sub_idx)).or_default() += 1;
        *key_marginal.entry(key_idx).or_default() += 1;
        *sub_marginal.entry(sub_idx).or_default() += 1;
    }

    // I = H(key) + H(sub) − H(joint) = log2 N + (S_joint − S_key − S_sub)/N
    // with S = Σ c·log2 c over exact integer counts.
    let nf = total as f64;
    let bits = nf.log2()
        + (sum_c_log_c(joint.values())
            - sum_c_log_c(key_marginal.values())
            - sum_c_log_c(sub_marginal.values()))
            / nf;
    let bits = bits.max(0.0);
    debug_assert!(bits <= m as f64 * (q as f64).log2() + 1e-9);
    Ok(MutualInfoResult {
        bits,
        q: q as u32,
        n,
        k,
        m,
        p,
        subset: subset.to_vec(),
        method: "exhaustive",
    })
}

/// The piecewise closed form: 0 when m ≤ n−k (the observed segment leaves
/// every subset of that size undetermined), else (m−n+k)·log2 q.
pub fn closed_form_mi(q: u32, n: usize, k: usize, m: usize) -> f64 {
    if m <= n - k {
        0.0
    } else {
        (m - (n - k)) as f64 * (q as f64).log2()
    }
}

/// Counts the watchwords w for which (imsi ∥ w) encodes to the observed
/// segment at offset p. Uniform counts across all candidate identities are
/// the operational meaning of zero mutual information.
pub fn consistency_count(
    observed_segment: &SymbolVector,
    imsi_candidate: &Identity,
    a: &VandermondeMatrix,
    p: usize,
) -> Result<u64, OracleError> {
    let n = a.n();
    let q = a.spec().q() as u64;
    let k = observed_segment.len();
    let m = imsi_candidate.symbols().len();
    if k == 0 || k > n || p > n - k {
        return Err(OracleError::BadSegment { p, k, n });
    }
    if m > n {
        return Err(OracleError::BadSubset {
            subset: (0..m).collect(),
            n,
        });
    }
    let states = (q as u128).pow((n - m) as u32);
    if states > ENUMERATION_BOUND {
        return Err(OracleError::EnumerationBound { states });
    }
    let spec = a.spec();
    let mut count = 0u64;
    let mut w = vec![0u16; n - m];
    let imsi_syms = imsi_candidate.symbols().symbols();
    for code in 0..states as u64 {
        decode_symbols(code, q, &mut w);
        let mut matches = true;
        for r in 0..k {
            let mut acc = 0u16;
            for (j, &s) in imsi_syms.iter().chain(w.iter()).enumerate() {
                acc ^= spec.mul_raw(a.entry(p + r, j), s);
            }
            if acc != observed_segment.symbols()[r] {
                matches = false;
                break;
            }
        }
        if matches {
            count += 1;
        }
    }
    Ok(count)
}

// ---------------------------------------------------------------------------
// The distinguisher game
// ---------------------------------------------------------------------------

/// One round of the game: the adversary sees customer i's KeyA and customer
/// j's KeyB (plus the public offsets) and must decide whether i and j share
/// an identity.
#[derive(Debug, Clone)]
pub struct GameInstance {
    pub key_a_i: Key,
    pub key_b_j: Key,
    pub p: usize,
    pub p_prime: usize,
    /// Test fixture only — honest adversaries must not read this.
    pub ground_truth_same: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistinguisherResult {
    pub trials: usize,
    pub successes: usize,
    pub same_trials: usize,
    pub diff_trials: usize,
    /// P_Y: rate of "same" answers when the identities were the same.
    pub p_yes_given_same: f64,
    /// P_N: rate of "different" answers when they were different.
    pub p_no_given_diff: f64,
    pub advantage: f64,
}

pub trait Adversary {
    fn name(&self) -> &'static str;
    /// true = "same identity".
    fn decide(&mut self, instance: &GameInstance, rng: &mut dyn RngCore) -> bool;
}

/// Lower calibration point: a fair coin.
pub struct RandomGuess;

impl Adversary for RandomGuess {
    fn name(&self) -> &'static str {
        "random-guess"
    }
    fn decide(&mut self, _instance: &GameInstance, rng: &mut dyn RngCore) -> bool {
        rng.next_u32() & 1 == 1
    }
}

/// Upper calibration point: reads the fixture's ground truth, so its
/// advantage is exactly 1/2 and validates the tallying harness.
pub struct OracleCheat;

impl Adversary for OracleCheat {
    fn name(&self) -> &'static str {
        "oracle-cheat"
    }
    fn decide(&mut self, instance: &GameInstance, _rng: &mut dyn RngCore) -> bool {
        instance.ground_truth_same
    }
}

/// The strongest honest adversary at enumerable parameters: exact posterior
/// odds of "same" vs "different" by exhaustive counting over identities,
/// watchwords, and seeds.
pub struct BayesOptimal {
    q: u64,
    m_count: u64,
    /// ca[imsi][keyA] = #watchwords mapping (imsi, w) to keyA.
    ca: Vec<Vec<u64>>,
    /// cb[p'][keyA][keyB] = #seeds mapping (keyA, seed) to keyB at offset p'.
    cb: Vec<Vec<Vec<u64>>>,
    /// d[p'][imsi][keyB] = Σ_a ca[imsi][a]·cb[p'][a][b].
    d: Vec<Vec<Vec<u64>>>,
    /// d_total[p'][keyB] = Σ_imsi d[p'][imsi][b].
    d_total: Vec<Vec<u64>>,
}

impl BayesOptimal {
    pub fn new(params: &KeygenParams, a: &VandermondeMatrix) -> Result<Self, OracleError> {
        let spec = params.spec();
        let q = spec.q() as u64;
        let (n, k, m) = (params.n(), params.k(), params.m());
        let states = (q as u128).pow(n as u32);
        if states > ENUMERATION_BOUND {
            return Err(OracleError::EnumerationBound { states });
        }
        let m_count = q.pow(m as u32);
        let w_count = q.pow((n - m) as u32);
        let a_count = q.pow(k as u32) as usize;
        let s_count = q.pow((n - k) as u32);
        let offsets = n - k + 1;

        let mut ca = vec![vec![0u64; a_count]; m_count as usize];
        let mut id_syms = vec![0u16; m];
        let mut w_syms = vec![0u16; n - m];
        for id_code in 0..m_count {
            decode_symbols(id_code, q, &mut id_syms);
            let id = Identity::from_symbols(SymbolVector::new(spec, id_syms.clone())?);
            for w_code in 0..w_count {
                decode_symbols(w_code, q, &mut w_syms);
                let w = Watchword::new(SymbolVector::new(spec, w_syms.clone())?);
                let key = derive_key_a(&mix_tier1(&id, &w, params)?, a, params)?;
                let idx = index_of(key.symbols().expect("symbol key").symbols(), q);
                ca[id_code as usize][idx as usize] += 1;
            }
        }

        let mut cb = vec![vec![vec![0u64; a_count]; a_count]; offsets];
        let mut a_syms = vec![0u16; k];
        let mut s_syms = vec![0u16; n - k];
        for a_code in 0..a_count as u64 {
            decode_symbols(a_code, q, &mut a_syms);
            let key_a = Key {
                scheme: crate::keygen::Scheme::NetworkCoding,
                role: KeyRole::KeyA,
                material: crate::keygen::KeyMaterial::Symbols(SymbolVector::new(
                    spec,
                    a_syms.clone(),
                )?),
            };
            for s_code in 0..s_count {
                decode_symbols(s_code, q, &mut s_syms);
                let seed = Seed::new(SymbolVector::new(spec, s_syms.clone())?);
                let b_prime = mix_tier2(&key_a, &seed, params)?;
                for (p_prime, table) in cb.iter_mut().enumerate() {
                    let key_b = derive_key_b(&b_prime, a, params, p_prime)?;
                    let idx = index_of(key_b.symbols().expect("symbol key").symbols(), q);
                    table[a_code as usize][idx as usize] += 1;
                }
            }
        }

        let mut d = vec![vec![vec![0u64; a_count]; m_count as usize]; offsets];
        let mut d_total = vec![vec![0u64; a_count]; offsets];
        for pp in 0..offsets {
            for imsi in 0..m_count as usize {
                for av in 0..a_count {
                    let weight = ca[imsi][av];
                    if weight == 0 {
                        continue;
                    }
                    for bv in 0..a_count {
                        d[pp][imsi][bv] += weight * cb[pp][av][bv];
                    }
                }
                for bv in 0..a_count {
                    d_total[pp][bv] += d[pp][imsi][bv];
                }
            }
        }

        Ok(BayesOptimal {
            q,
            m_count,
            ca,
            cb,
            d,
            d_total,
        })
    }
}

impl Adversary for BayesOptimal {
    fn name(&self) -> &'static str {
        "bayes-optimal"
    }

    fn decide(&mut self, instance: &GameInstance, rng: &mut dyn RngCore) -> bool {
        let a_idx =
            index_of(instance.key_a_i.symbols().expect("symbol key").symbols(), self.q) as usize;
        let b_idx =
            index_of(instance.key_b_j.symbols().expect("symbol key").symbols(), self.q) as usize;
        let pp = instance.p_prime;
        // Likelihoods on the common denominator (q^m − 1)·q^n·q^(n−k):
        //   same:      Σ_i ca[i][a]·cb[a][b] · (q^m − 1)
        //   different: Σ_i ca[i][a]·(d_total[b] − d[i][b])
        let mut l_same = 0u128;
        let mut l_diff = 0u128;
        for imsi in 0..self.m_count as usize {
            let weight = self.ca[imsi][a_idx] as u128;
            if weight == 0 {
                continue;
            }
            l_same += weight * self.cb[pp][a_idx][b_idx] as u128;
            l_diff += weight * (self.d_total[pp][b_idx] - self.d[pp][imsi][b_idx]) as u128;
        }
        l_same *= (self.m_count - 1) as u128;
        match l_same.cmp(&l_diff) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => rng.next_u32() & 1 == 1,
        }
    }
}

fn random_identity<R: Rng>(rng: &mut R, params: &KeygenParams) -> Identity {
    let spec = params.spec();
    let syms = (0..params.m())
        .map(|_| rng.gen_range(0..spec.q()) as u16)
        .collect();
    Identity::from_symbols(SymbolVector::new(spec, syms).expect("in range"))
}

/// Draws one game round: fair coin for same/different, uniform independent
/// secrets, fresh seed and public offset p' for the KeyB side.
pub fn generate_instance<R: Rng>(
    params: &KeygenParams,
    a: &VandermondeMatrix,
    rng: &mut R,
) -> Result<GameInstance, OracleError> {
    let spec = params.spec();
    let id_i = random_identity(rng, params);
    let w_i = Watchword::random(rng, spec, params.n() - params.m());
    let b_i = mix_tier1(&id_i, &w_i, params)?;
    let key_a_i = derive_key_a(&b_i, a, params)?;

    let same = rng.gen_bool(0.5);
    let key_a_j = if same {
        key_a_i.clone()
    } else {
        // Conditioning on "different" means a genuinely distinct identity.
        let id_j = loop {
            let cand = random_identity(rng, params);
            if cand.symbols() != id_i.symbols() {
                break cand;
            }
        };
        let w_j = Watchword::random(rng, spec, params.n() - params.m());
        derive_key_a(&mix_tier1(&id_j, &w_j, params)?, a, params)?
    };
    let seed = Seed::generate(rng, spec, params.n() - params.k());
    let p_prime = params.draw_offset(rng);
    let key_b_j = derive_key_b(&mix_tier2(&key_a_j, &seed, params)?, a, params, p_prime)?;
    Ok(GameInstance {
        key_a_i,
        key_b_j,
        p: params.p(),
        p_prime,
        ground_truth_same: same,
    })
}

fn tally(outcomes: &[(bool, bool)]) -> DistinguisherResult {
    let trials = outcomes.len();
    let successes = outcomes.iter().filter(|(truth, ans)| truth == ans).count();
    let same_trials = outcomes.iter().filter(|(truth, _)| *truth).count();
    let diff_trials = trials - same_trials;
    let yes_given_same = outcomes.iter().filter(|(t, a)| *t && *a).count();
    let no_given_diff = outcomes.iter().filter(|(t, a)| !*t && !*a).count();
    DistinguisherResult {
        trials,
        successes,
        same_trials,
        diff_trials,
        p_yes_given_same: if same_trials == 0 {
            0.0
        } else {
            yes_given_same as f64 / same_trials as f64
        },
        p_no_given_diff: if diff_trials == 0 {
            0.0
        } else {
            no_given_diff as f64 / diff_trials as f64
        },
        advantage: (successes as f64 / trials as f64 - 0.5).abs(),
    }
}

/// Runs `trials` rounds of the game and tallies P_Y, P_N and the advantage
/// |success rate − 1/2|.
pub fn play_distinguisher<A: Adversary + ?Sized, R: Rng + RngCore>(
    adversary: &mut A,
    trials: usize,
    params: &KeygenParams,
    a: &VandermondeMatrix,
    rng: &mut R,
) -> Result<DistinguisherResult, OracleError> {
    let mut outcomes = Vec::with_capacity(trials);
    for _ in 0..trials {
        let instance = generate_instance(params, a, rng)?;
        let answer = adversary.decide(&instance, rng);
        outcomes.push((instance.ground_truth_same, answer));
    }
    Ok(tally(&outcomes))
}

/// Reduction combinator: turns a same-identity distinguisher into an
/// ID↔pseudonym linker over store-format keys. Instances pass through the
/// canonical hex round trip (registry KeyA, ODB KeyB), so any advantage
/// carries over to linking stored records to identities.
pub fn play_linker<A: Adversary + ?Sized, R: Rng + RngCore>(
    adversary: &mut A,
    trials: usize,
    params: &KeygenParams,
    a: &VandermondeMatrix,
    rng: &mut R,
) -> Result<DistinguisherResult, OracleError> {
    let spec = params.spec();
    let mut outcomes = Vec::with_capacity(trials);
    for _ in 0..trials {
        let fresh = generate_instance(params, a, rng)?;
        let instance = GameInstance {
            key_a_i: Key::from_symbol_hex(spec, KeyRole::KeyA, &fresh.key_a_i.hex())?,
            key_b_j: Key::from_symbol_hex(spec, KeyRole::KeyB, &fresh.key_b_j.hex())?,
            ..fresh
        };
        let answer = adversary.decide(&instance, rng);
        outcomes.push((instance.ground_truth_same, answer));
    }
    Ok(tally(&outcomes))
}

// ---------------------------------------------------------------------------
// Reduced-system verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ReducedCheckReport {
    pub trials: usize,
    pub violations: usize,
}

/// For random source vectors, checks that the transform of the observed
/// segment equals the reduced equations' right-hand side.
pub fn verify_with<R: Rng>(
    rs: &ReducedSystem,
    a: &VandermondeMatrix,
    trials: usize,
    rng: &mut R,
) -> Result<ReducedCheckReport, OracleError> {
    let spec = a.spec();
    let mut violations = 0;
    for _ in 0..trials {
        let b = SymbolVector::new(
            spec,
            (0..a.n())
                .map(|_| rng.gen_range(0..spec.q()) as u16)
                .collect(),
        )?;
        let c = a.encode(&b)?;
        let v = rs.apply_transform(&c.segment(rs.p(), rs.k()))?;
        if v != rs.apply_reduced(&b)? {
            violations += 1;
        }
    }
    Ok(ReducedCheckReport { trials, violations })
}

pub fn verify_reduced_system<R: Rng>(
    a: &VandermondeMatrix,
    p: usize,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ReducedCheckReport, OracleError> {
    let rs = a.reduce_segment(p, k)?;
    verify_with(&rs, a, trials, rng)
}
