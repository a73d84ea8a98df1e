//! Benchmark harness: key-generation latency versus identity bit length for
//! the network-coding scheme and the hash baselines, plus an energy model
//! combining CPU cost with per-bit radio cost weighted by the small-field
//! retransmission overhead of random linear coding.

use crate::gf::FieldSpec;
use crate::keygen::{
    derive_key_a, derive_key_b, hash_pseudonym, mix_tier1, mix_tier2, pack_bytes_to_symbols,
    Identity, KeygenError, KeygenParams, Scheme, Seed, Watchword,
};
use crate::linalg::VandermondeMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::hint::black_box;
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Keygen(#[from] KeygenError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed report row: {0}")]
    Parse(String),
}

/// A timed scheme: the coding scheme at a field size, or a hash baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum BenchScheme {
    Nc { u: u32 },
    Md5,
    Sha1,
    Sha256,
}

impl BenchScheme {
    pub fn label(&self) -> String {
        match self {
            BenchScheme::Nc { u } => format!("nc-u{u}"),
            BenchScheme::Md5 => "md5".into(),
            BenchScheme::Sha1 => "sha1".into(),
            BenchScheme::Sha256 => "sha256".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self, BenchError> {
        match s {
            "md5" => Ok(BenchScheme::Md5),
            "sha1" => Ok(BenchScheme::Sha1),
            "sha256" => Ok(BenchScheme::Sha256),
            _ => s
                .strip_prefix("nc-u")
                .and_then(|u| u.parse().ok())
                .map(|u| BenchScheme::Nc { u })
                .ok_or_else(|| BenchError::Parse(format!("unknown scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub imsi_bit_lengths: Vec<usize>,
    pub schemes: Vec<BenchScheme>,
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            imsi_bit_lengths: (1..=20).map(|i| i * 10).collect(),
            schemes: vec![
                BenchScheme::Nc { u: 8 },
                BenchScheme::Nc { u: 10 },
                BenchScheme::Md5,
                BenchScheme::Sha1,
                BenchScheme::Sha256,
            ],
            iterations: 200,
            warmup: 20,
            seed: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.iterations == 0 {
            return Err(BenchError::InvalidConfig("iterations must be >= 1".into()));
        }
        if self.imsi_bit_lengths.iter().any(|&l| l == 0) {
            return Err(BenchError::InvalidConfig("bit lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Radio/CPU cost model. Defaults follow the reference setup: 8 packets of
/// 1 KB coded together at 200 pJ/bit. `p_cpu` is a documented 1 W
/// placeholder — absolute joules are device-specific; only the trend across
/// field sizes is meaningful.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyModel {
    pub e_bit: f64,
    pub packets: u32,
    pub packet_size_bytes: u32,
    pub p_cpu: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            e_bit: 200e-12,
            packets: 8,
            packet_size_bytes: 1024,
            p_cpu: 1.0,
        }
    }
}

/// Expected transmissions to deliver g innovative packets when coding
/// vectors are uniform over F_q^g: Σ_{r=0}^{g-1} 1/(1 − q^(r−g)). Always
/// ≥ g and shrinking toward g as q grows.
pub fn overhead(q: u32, g: u32) -> f64 {
    (0..g)
        .map(|r| 1.0 / (1.0 - (q as f64).powi(r as i32 - g as i32)))
        .sum()
}

/// Monte Carlo oracle for [`overhead`]: draws uniform vectors in F_q^g and
/// counts how many arrive before the span reaches full rank.
pub fn overhead_monte_carlo<R: Rng>(spec: FieldSpec, g: usize, samples: usize, rng: &mut R) -> f64 {
    let q = spec.q();
    let mut total_draws = 0u64;
    for _ in 0..samples {
        // Row-echelon basis keyed by pivot column.
        let mut basis: Vec<Vec<u16>> = Vec::new();
        let mut rank = 0usize;
        while rank < g {
            total_draws += 1;
            let mut v: Vec<u16> = (0..g).map(|_| rng.gen_range(0..q) as u16).collect();
            for row in &basis {
                let pivot = row.iter().position(|&x| x != 0).expect("basis rows nonzero");
                if v[pivot] != 0 {
                    let f = v[pivot];
                    for (x, &r) in v.iter_mut().zip(row) {
                        *x ^= spec.mul_raw(f, r);
                    }
                }
            }
            if let Some(pivot) = v.iter().position(|&x| x != 0) {
                let inv = spec.inv_raw(v[pivot]).expect("nonzero");
                for x in v.iter_mut() {
                    *x = spec.mul_raw(*x, inv);
                }
                basis.push(v);
                basis.sort_by_key(|r| r.iter().position(|&x| x != 0));
                rank += 1;
            }
        }
    }
    total_draws as f64 / samples as f64
}

/// E = p_cpu·code_time + e_bit·(packets·packet_size·8)·overhead.
pub fn energy_estimate(model: &EnergyModel, code_time_secs: f64, transmission_overhead: f64) -> f64 {
    let payload_bits = model.packets as f64 * model.packet_size_bytes as f64 * 8.0;
    model.p_cpu * code_time_secs + model.e_bit * payload_bits * transmission_overhead
}

/// Hash pseudonyms need one plain transmission; the coding scheme pays the
/// field-size-dependent innovation overhead.
pub fn scheme_overhead(scheme: BenchScheme, model: &EnergyModel) -> f64 {
    match scheme {
        BenchScheme::Nc { u } => overhead(1u32 << u, model.packets),
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
}

fn percentile(sorted: &[u64], pct: f64) -> u64 {
    let idx = ((sorted.len() - 1) as f64 * pct).round() as usize;
    sorted[idx]
}

/// SHA-256 compression blocks for an input of `bits`: padding adds one bit
/// plus a 64-bit length, rounded up to 512-bit chunks.
pub fn sha256_blocks(input_bits: usize) -> usize {
    (input_bits + 1 + 64).div_ceil(512)
}

/// Times one full key derivation for `scheme` over identities of
/// `imsi_bits` bits: tier-1 + tier-2 for the coding scheme, one truncated
/// digest for the hash baselines. Inputs are identical across schemes for a
/// given (seed, imsi_bits).
pub fn time_keygen(
    scheme: BenchScheme,
    imsi_bits: usize,
    cfg: &BenchConfig,
) -> Result<LatencyStats, BenchError> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ imsi_bits as u64);
    let input: Vec<u8> = (0..imsi_bits.div_ceil(8)).map(|_| rng.gen()).collect();

    let mut samples = Vec::with_capacity(cfg.iterations);
    match scheme {
        BenchScheme::Nc { u } => {
            let spec = FieldSpec::new(u).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
            let m = imsi_bits.div_ceil(u as usize);
            let n = 2 * m;
            let params = KeygenParams::new(spec, n, m, m, 0)?;
            let matrix = VandermondeMatrix::with_default_coeffs(spec, n)?;
            let packed = pack_bytes_to_symbols(&input, spec)?;
            let mut id_syms = packed.symbols().to_vec();
            id_syms.resize(m, 0);
            let identity = Identity::from_symbols(
                crate::linalg::SymbolVector::new(spec, id_syms).expect("in range"),
            );
            let watchword = Watchword::random(&mut rng, spec, n - m);
            for i in 0..cfg.warmup + cfg.iterations {
                let start = Instant::now();
                let b = mix_tier1(&identity, &watchword, &params)?;
                let key_a = derive_key_a(black_box(&b), &matrix, &params)?;
                let seed = Seed::generate(&mut rng, spec, n - m);
                let b_prime = mix_tier2(&key_a, &seed, &params)?;
                let key_b = derive_key_b(black_box(&b_prime), &matrix, &params, 0)?;
                black_box(key_b);
                if i >= cfg.warmup {
                    samples.push(start.elapsed().as_nanos() as u64);
                }
            }
        }
        BenchScheme::Md5 | BenchScheme::Sha1 | BenchScheme::Sha256 => {
            let (algo, out_bits) = match scheme {
                BenchScheme::Md5 => (Scheme::Md5, 128),
                BenchScheme::Sha1 => (Scheme::Sha1, 160),
                _ => (Scheme::Sha256, 256),
            };
            for i in 0..cfg.warmup + cfg.iterations {
                let start = Instant::now();
                let key = hash_pseudonym(black_box(&input), algo, out_bits)?;
                black_box(key);
                if i >= cfg.warmup {
                    samples.push(start.elapsed().as_nanos() as u64);
                }
            }
        }
    }
    samples.sort_unstable();
    Ok(LatencyStats {
        median_ns: percentile(&samples, 0.5).max(1),
        p10_ns: percentile(&samples, 0.1).max(1),
        p90_ns: percentile(&samples, 0.9).max(1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scheme: String,
    pub imsi_bits: usize,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Runs the full latency/energy grid; rows sorted by scheme then bits.
pub fn run_bench(cfg: &BenchConfig, model: &EnergyModel) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &scheme in &cfg.schemes {
        for &bits in &cfg.imsi_bit_lengths {
            let stats = time_keygen(scheme, bits, cfg)?;
            let energy = energy_estimate(
                model,
                stats.median_ns as f64 * 1e-9,
                scheme_overhead(scheme, model),
            );
            rows.push(BenchRow {
                scheme: scheme.label(),
                imsi_bits: bits,
                median_ns: stats.median_ns,
                p10_ns: stats.p10_ns,
                p90_ns: stats.p90_ns,
                energy_j: energy,
            });
        }
    }
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.imsi_bits.cmp(&b.imsi_bits)));
    Ok(BenchReport { rows })
}

pub const CSV_HEADER: &str = "scheme,imsi_bits,median_ns,p10_ns,p90_ns,energy_j";

pub fn report_csv(report: &BenchReport, path: &Path) -> Result<(), BenchError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for r in &report.rows {
        writeln!(
            f,
            "{},{},{},{},{},{:e}",
            r.scheme, r.imsi_bits, r.median_ns, r.p10_ns, r.p90_ns, r.energy_j
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn parse_csv(path: &Path) -> Result<BenchReport, BenchError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(BenchError::Parse(format!("bad header {other:?}"))),
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(BenchError::Parse(format!("bad row {line:?}")));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|e| BenchError::Parse(e.to_string()));
        rows.push(BenchRow {
            scheme: f[0].to_string(),
            imsi_bits: f[1]
                .parse()
                .map_err(|e: std::num::ParseIntError| BenchError::Parse(e.to_string()))?,
            median_ns: num(f[2])?,
            p10_ns: num(f[3])?,
            p90_ns: num(f[4])?,
            energy_j: f[5]
                .parse()
                .map_err(|e: std::num::ParseFloatError| BenchError::Parse(e.to_string()))?,
        });
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quick_cfg() -> BenchConfig {
        BenchConfig {
            imsi_bit_lengths: vec![50],
            iterations: 50,
            warmup: 5,
            seed: 3,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn single_iteration_produces_a_row() {
        let cfg = BenchConfig {
            iterations: 1,
            warmup: 0,
            ..quick_cfg()
        };
        for scheme in [
            BenchScheme::Nc { u: 8 },
            BenchScheme::Md5,
            BenchScheme::Sha1,
            BenchScheme::Sha256,
        ] {
            let stats = time_keygen(scheme, 50, &cfg).unwrap();
            assert!(stats.median_ns > 0);
            assert!(stats.p10_ns <= stats.median_ns && stats.median_ns <= stats.p90_ns);
        }
        assert!(matches!(
            time_keygen(BenchScheme::Md5, 50, &BenchConfig { iterations: 0, ..quick_cfg() }),
            Err(BenchError::InvalidConfig(_))
        ));
    }

    #[test]
    fn field_size_barely_affects_coding_latency() {
        let cfg = BenchConfig {
            iterations: 300,
            ..quick_cfg()
        };
        let u8_stats = time_keygen(BenchScheme::Nc { u: 8 }, 50, &cfg).unwrap();
        let u10_stats = time_keygen(BenchScheme::Nc { u: 10 }, 50, &cfg).unwrap();
        let ratio = u8_stats.median_ns.max(u10_stats.median_ns) as f64
            / u8_stats.median_ns.min(u10_stats.median_ns) as f64;
        assert!(ratio < 8.0, "u=8 vs u=10 medians differ by {ratio}x");
    }

    #[test]
    fn sha256_chunk_boundary() {
        // 440 input bits still fit one padded 512-bit block; 448 spill into
        // a second compression.
        assert_eq!(sha256_blocks(440), 1);
        assert_eq!(sha256_blocks(448), 2);
        assert_eq!(sha256_blocks(0), 1);
        assert_eq!(sha256_blocks(447), 1);

        // The extra block is visible as a latency step. Wall-clock medians
        // jitter, so allow a few attempts.
        let cfg = BenchConfig {
            iterations: 2000,
            warmup: 100,
            ..quick_cfg()
        };
        let stepped = (0..3).any(|_| {
            let one = time_keygen(BenchScheme::Sha256, 440, &cfg).unwrap();
            let two = time_keygen(BenchScheme::Sha256, 448, &cfg).unwrap();
            two.median_ns > one.median_ns
        });
        assert!(stepped, "no latency step across the 512-bit chunk boundary");
    }

    #[test]
    fn overhead_examples() {
        let q256 = overhead(256, 8);
        assert!((q256 - 8.0039).abs() < 1e-3, "got {q256}");
        let q2 = overhead(2, 8);
        assert!((q2 - 9.61).abs() < 0.03, "got {q2}");
        // >= g, strictly decreasing in q.
        let mut prev = f64::INFINITY;
        for q in [2u32, 4, 16, 256, 1024] {
            let o = overhead(q, 8);
            assert!(o >= 8.0);
            assert!(o < prev);
            prev = o;
        }
    }

    #[test]
    fn overhead_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for u in [1u32, 2, 4, 8] {
            let spec = FieldSpec::new(u).unwrap();
            let q = spec.q();
            let measured = overhead_monte_carlo(spec, 8, 100_000, &mut rng);
            let expected = overhead(q, 8);
            assert!(
                (measured - expected).abs() / expected < 0.01,
                "q={q}: measured {measured}, expected {expected}"
            );
        }
    }

    #[test]
    fn energy_examples() {
        let model = EnergyModel::default();
        // Transmission term at overhead 1 and zero CPU time.
        let e = energy_estimate(&model, 0.0, 1.0);
        assert!((e - 200e-12 * 65536.0).abs() < 1e-18);
        assert!((e - 1.31072e-5).abs() < 1e-12);

        // Coding at q=2 costs more radio energy than q=256.
        let e2 = energy_estimate(&model, 0.0, overhead(2, 8));
        let e256 = energy_estimate(&model, 0.0, overhead(256, 8));
        assert!(e2 > e256);
        assert_eq!(scheme_overhead(BenchScheme::Md5, &model), 1.0);
    }

    #[test]
    fn timing_self_consistency() {
        let cfg = BenchConfig {
            iterations: 300,
            ..quick_cfg()
        };
        // Wall-clock medians jitter; the 20% bound is environment-dependent,
        // so take the best of a few attempts.
        let consistent = (0..3).any(|_| {
            let a = time_keygen(BenchScheme::Nc { u: 8 }, 50, &cfg).unwrap();
            let b = time_keygen(BenchScheme::Nc { u: 8 }, 50, &cfg).unwrap();
            let ratio = a.median_ns.max(b.median_ns) as f64 / a.median_ns.min(b.median_ns) as f64;
            ratio < 1.2
        });
        assert!(consistent, "medians of identical runs diverge by over 20%");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");

        // Header-only for an empty report.
        report_csv(&BenchReport::default(), &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), CSV_HEADER);

        let cfg = BenchConfig {
            imsi_bit_lengths: vec![20, 10],
            schemes: vec![BenchScheme::Sha1, BenchScheme::Nc { u: 8 }],
            iterations: 5,
            warmup: 0,
            seed: 4,
        };
        let report = run_bench(&cfg, &EnergyModel::default()).unwrap();
        // Deterministic row order: scheme, then bits ascending.
        let keys: Vec<(String, usize)> = report
            .rows
            .iter()
            .map(|r| (r.scheme.clone(), r.imsi_bits))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert_eq!(report.rows.len(), 4);

        report_csv(&report, &path).unwrap();
        assert_eq!(parse_csv(&path).unwrap(), report);
    }

    #[test]
    fn scheme_labels_round_trip() {
        for s in [
            BenchScheme::Nc { u: 8 },
            BenchScheme::Nc { u: 10 },
            BenchScheme::Md5,
            BenchScheme::Sha1,
            BenchScheme::Sha256,
        ] {
            assert_eq!(BenchScheme::parse(&s.label()).unwrap(), s);
        }
        assert!(BenchScheme::parse("blake3").is_err());
    }

    proptest! {
        /// E is affine in code_time (slope p_cpu) and in overhead
        /// (slope e_bit·payload_bits).
        #[test]
        fn energy_is_affine(t1 in 0.0f64..1.0, t2 in 0.0f64..1.0,
                            o1 in 1.0f64..20.0, o2 in 1.0f64..20.0) {
            let model = EnergyModel::default();
            let payload = 8.0 * 1024.0 * 8.0;
            let d_time = energy_estimate(&model, t2, o1) - energy_estimate(&model, t1, o1);
            prop_assert!((d_time - model.p_cpu * (t2 - t1)).abs() < 1e-12);
            let d_over = energy_estimate(&model, t1, o2) - energy_estimate(&model, t1, o1);
            prop_assert!((d_over - model.e_bit * payload * (o2 - o1)).abs() < 1e-12);
        }
    }
}
