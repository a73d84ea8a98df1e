//! `igs` — command-line front end for the two-tier network-coding pseudonym
//! scheme: key derivation, end-to-end protocol simulation, security oracles,
//! store audits, and benchmarks.
//!
//! Every subcommand is deterministic under `--seed`. Exit codes: 0 pass,
//! 1 check failure, 2 usage/configuration error.

use clap::{Parser, Subcommand};
use igs_core::bench::{self, BenchConfig, EnergyModel};
use igs_core::gf::FieldSpec;
use igs_core::keygen::{
    derive_key_a, derive_key_b, hash_pseudonym, mix_tier1, mix_tier2, Identity, KeygenParams,
    Scheme, Seed, Watchword,
};
use igs_core::linalg::VandermondeMatrix;
use igs_core::oracle::{
    self, Adversary, BayesOptimal, OracleCheat, RandomGuess,
};
use igs_core::protocol::{self, PrivacyLevel, ScenarioConfig};
use igs_core::rng::{streams, substream};
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "igs", version, about = "Two-tier network-coding pseudonyms for group LBS")]
struct Cli {
    /// Master RNG seed; all randomness derives from named substreams of it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// JSON config file; explicit flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (event log, JSON report, or CSV, per subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive KeyA (and optionally KeyB) from an IMSI and watchword, or a
    /// hash-scheme pseudonym.
    Keygen {
        /// IMSI decimal digit string.
        #[arg(long)]
        imsi: String,
        /// Watchword passphrase (required for the coding scheme).
        #[arg(long)]
        watchword: Option<String>,
        /// network-coding | md5 | sha1 | sha256
        #[arg(long, default_value = "network-coding")]
        scheme: String,
        /// Field exponent u for GF(2^u).
        #[arg(long, default_value_t = 8)]
        u: u32,
        /// Code length n (default 2·m for the given IMSI).
        #[arg(long)]
        n: Option<usize>,
        /// Segment offset p.
        #[arg(long, default_value_t = 0)]
        p: usize,
        /// Also derive a KeyB with a fresh seed.
        #[arg(long)]
        keyb: bool,
        /// Truncated digest length for hash schemes.
        #[arg(long, default_value_t = 128)]
        out_bits: usize,
    },
    /// Run the full seeded protocol simulation and write stores + event log.
    Simulate {
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        members: Option<usize>,
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        silence_min: Option<u64>,
        #[arg(long)]
        silence_max: Option<u64>,
        /// Pseudonym-exchange tolerance distance in meters.
        #[arg(long)]
        tolerance: Option<f64>,
        /// exact | street | city
        #[arg(long)]
        level: Option<PrivacyLevel>,
        #[arg(long, default_value = "registry.jsonl")]
        registry: PathBuf,
        #[arg(long, default_value = "odb.jsonl")]
        odb: PathBuf,
    },
    /// Measure mutual information and run the distinguisher game; JSON report.
    Oracle {
        /// Field size q = 2^u.
        #[arg(long, default_value_t = 8)]
        q: u32,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        /// Distinguisher trials per adversary.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Extra random subsets measured per offset.
        #[arg(long, default_value_t = 3)]
        subsets: usize,
    },
    /// Check that the registry and ODB stores stay decoupled.
    Audit {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        odb: PathBuf,
    },
    /// Key-generation latency and energy-model benchmarks; CSV report.
    Bench {},
}

#[derive(Debug)]
enum CliError {
    /// Bad flags, config, or I/O — exit 2.
    Usage(String),
    /// A verification failed — exit 1.
    CheckFailed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

/// Loads the JSON config file if given, else the default.
fn load_config<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_keygen(
    cli: &Cli,
    imsi: &str,
    watchword: &Option<String>,
    scheme: &str,
    u: u32,
    n: Option<usize>,
    p: usize,
    keyb: bool,
    out_bits: usize,
) -> Result<String, CliError> {
    if scheme != "network-coding" {
        let algo = match scheme {
            "md5" => Scheme::Md5,
            "sha1" => Scheme::Sha1,
            "sha256" => Scheme::Sha256,
            other => return Err(usage(format!("unknown scheme {other:?}"))),
        };
        let mut input = imsi.as_bytes().to_vec();
        if let Some(w) = watchword {
            input.extend_from_slice(w.as_bytes());
        }
        let key = hash_pseudonym(&input, algo, out_bits).map_err(usage)?;
        return Ok(format!("{} {}", algo.name(), key.hex()));
    }

    let spec = FieldSpec::new(u).map_err(usage)?;
    let identity = Identity::from_digits(imsi, spec).map_err(usage)?;
    let m = identity.symbols().len();
    let n = n.unwrap_or(2 * m);
    let k = n / 2;
    let params = KeygenParams::new(spec, n, k, m, p).map_err(usage)?;
    let phrase = watchword
        .as_deref()
        .ok_or_else(|| usage("the network-coding scheme requires --watchword"))?;
    let w = Watchword::from_phrase(phrase, spec, n - m).map_err(usage)?;
    let matrix = VandermondeMatrix::with_default_coeffs(spec, n).map_err(usage)?;
    let key_a = derive_key_a(&mix_tier1(&identity, &w, &params).map_err(usage)?, &matrix, &params)
        .map_err(usage)?;
    let mut lines = format!("keya {}", key_a.hex());
    if keyb {
        let mut rng = substream(cli.seed, streams::KEYGEN);
        let seed = Seed::generate(&mut rng, spec, n - k);
        let p_prime = params.draw_offset(&mut rng);
        let key_b = derive_key_b(
            &mix_tier2(&key_a, &seed, &params).map_err(usage)?,
            &matrix,
            &params,
            p_prime,
        )
        .map_err(usage)?;
        lines.push_str(&format!("\nkeyb {}", key_b.hex()));
    }
    Ok(lines)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cli: &Cli,
    groups: Option<usize>,
    members: Option<usize>,
    ticks: Option<u64>,
    silence_min: Option<u64>,
    silence_max: Option<u64>,
    tolerance: Option<f64>,
    level: Option<PrivacyLevel>,
    registry: &PathBuf,
    odb: &PathBuf,
) -> Result<String, CliError> {
    let mut cfg: ScenarioConfig = load_config(&cli.config)?;
    cfg.seed = cli.seed;
    if let Some(v) = groups {
        cfg.groups = v;
    }
    if let Some(v) = members {
        cfg.members_per_group = v;
    }
    if let Some(v) = ticks {
        cfg.ticks = v;
    }
    if let Some(v) = silence_min {
        cfg.silence_min = v;
    }
    if let Some(v) = silence_max {
        cfg.silence_max = v;
    }
    if let Some(v) = tolerance {
        cfg.tolerance_distance = v;
    }
    if let Some(v) = level {
        cfg.privacy_level = v;
    }

    let outcome = protocol::run_scenario(&cfg).map_err(usage)?;
    protocol::write_jsonl(registry, &outcome.registry).map_err(usage)?;
    protocol::write_jsonl(odb, &outcome.odb).map_err(usage)?;
    let log = serde_json::to_string_pretty(&outcome.events).expect("events serialize");
    match &cli.out {
        Some(p) => std::fs::write(p, &log)
            .map_err(|e| usage(format!("cannot write {}: {e}", p.display())))?,
        None => println!("{log}"),
    }
    Ok(format!(
        "exchanges={} regenerations={} odb_records={} eavesdrop_digest={}",
        outcome.exchanges,
        outcome.regenerations,
        outcome.odb.len(),
        outcome.eavesdrop_digest
    ))
}

fn cmd_oracle(
    cli: &Cli,
    q: u32,
    n: usize,
    k: usize,
    m: usize,
    trials: usize,
    extra_subsets: usize,
) -> Result<String, CliError> {
    if !q.is_power_of_two() || q < 2 {
        return Err(usage(format!("q must be a power of two >= 2, got {q}")));
    }
    let u = q.trailing_zeros();
    let spec = FieldSpec::new(u).map_err(usage)?;
    let matrix = VandermondeMatrix::with_default_coeffs(spec, n).map_err(usage)?;
    let mut rng = substream(cli.seed, streams::ORACLE);

    // Mutual information: contiguous first-m plus random subsets, every offset.
    let mut subset_rows = Vec::new();
    let mut mi_pass = true;
    for p in 0..=(n - k) {
        let mut subsets: Vec<Vec<usize>> = vec![(0..m).collect()];
        for _ in 0..extra_subsets {
            let mut pool: Vec<usize> = (0..n).collect();
            for i in (1..pool.len()).rev() {
                let j = (oracle_rand(&mut rng) as usize) % (i + 1);
                pool.swap(i, j);
            }
            let mut s = pool[..m].to_vec();
            s.sort_unstable();
            subsets.push(s);
        }
        subsets.dedup();
        for subset in subsets {
            let r = oracle::brute_mutual_info(&matrix, p, k, &subset).map_err(usage)?;
            let closed = oracle::closed_form_mi(q, n, k, subset.len());
            let pass = (r.bits - closed).abs() < 1e-9;
            mi_pass &= pass;
            subset_rows.push(json!({
                "p": p, "subset": subset, "measured_bits": r.bits,
                "closed_form_bits": closed, "pass": pass,
            }));
        }
    }

    // Distinguisher game with the calibration pair plus the optimal adversary.
    let params = KeygenParams::new(spec, n, k, m, 0).map_err(usage)?;
    let threshold = 3.0 * (0.25 / trials as f64).sqrt();
    let mut tallies = Vec::new();
    let mut game_pass = true;
    let mut run =
        |adv: &mut dyn Adversary, rng: &mut _| -> Result<(), CliError> {
            let r = oracle::play_distinguisher(adv, trials, &params, &matrix, rng)
                .map_err(usage)?;
            let pass = match adv.name() {
                "oracle-cheat" => r.successes as f64 / r.trials as f64 > 0.99,
                _ => r.advantage < threshold,
            };
            game_pass &= pass;
            tallies.push(json!({
                "adversary": adv.name(), "trials": r.trials, "successes": r.successes,
                "p_yes_given_same": r.p_yes_given_same, "p_no_given_diff": r.p_no_given_diff,
                "advantage": r.advantage, "pass": pass,
            }));
            Ok(())
        };
    run(&mut RandomGuess, &mut rng)?;
    run(
        &mut BayesOptimal::new(&params, &matrix).map_err(usage)?,
        &mut rng,
    )?;
    run(&mut OracleCheat, &mut rng)?;

    let pass = mi_pass && game_pass;
    let report = json!({
        "q": q, "n": n, "k": k, "m": m, "seed": cli.seed,
        "mutual_information": subset_rows,
        "distinguisher": tallies,
        "advantage_threshold": threshold,
        "pass": pass,
    });
    write_or_print(&cli.out, &serde_json::to_string_pretty(&report).expect("report"))?;
    if pass {
        Ok(format!("oracle pass (q={q} n={n} k={k} m={m})"))
    } else {
        Err(CliError::CheckFailed(format!(
            "oracle report has failing rows (q={q} n={n} k={k} m={m})"
        )))
    }
}

/// Uniform u64 from the oracle substream without pulling trait imports in.
fn oracle_rand(rng: &mut rand_chacha::ChaCha20Rng) -> u64 {
    use rand_chacha::rand_core::RngCore;
    rng.next_u64()
}

fn cmd_audit(cli: &Cli, registry: &PathBuf, odb: &PathBuf) -> Result<String, CliError> {
    let report = protocol::audit_files(registry, odb).map_err(usage)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    write_or_print(&cli.out, &text)?;
    if report.is_clean() {
        Ok(format!(
            "audit pass: {} ODB records vs {} registry records, 0 violations",
            report.odb_records, report.registry_records
        ))
    } else {
        Err(CliError::CheckFailed(format!(
            "{} decoupling violation(s); first at ODB line {}",
            report.violations.len(),
            report.violations[0].line
        )))
    }
}

fn cmd_bench(cli: &Cli) -> Result<String, CliError> {
    let mut cfg: BenchConfig = load_config(&cli.config)?;
    cfg.seed = cli.seed;
    let model = EnergyModel::default();
    let report = bench::run_bench(&cfg, &model).map_err(usage)?;
    let path = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("bench.csv"));
    bench::report_csv(&report, &path).map_err(usage)?;

    // Measured (not asserted) cross-scheme ratios at the first common length.
    let median = |scheme: &str| {
        report
            .rows
            .iter()
            .find(|r| r.scheme == scheme)
            .map(|r| (r.imsi_bits, r.median_ns, r.energy_j))
    };
    let mut summary = format!("wrote {} rows to {}", report.rows.len(), path.display());
    if let (Some((bits, nc_ns, nc_j)), Some((_, sha_ns, sha_j))) =
        (median("nc-u8"), median("sha256"))
    {
        summary.push_str(&format!(
            "\nmeasured at {bits} bits: time nc-u8/sha256 = {:.3}, energy nc-u8/sha256 = {:.3}",
            nc_ns as f64 / sha_ns as f64,
            nc_j / sha_j
        ));
    }
    Ok(summary)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Keygen {
            imsi,
            watchword,
            scheme,
            u,
            n,
            p,
            keyb,
            out_bits,
        } => cmd_keygen(cli, imsi, watchword, scheme, *u, *n, *p, *keyb, *out_bits),
        Command::Simulate {
            groups,
            members,
            ticks,
            silence_min,
            silence_max,
            tolerance,
            level,
            registry,
            odb,
        } => cmd_simulate(
            cli,
            *groups,
            *members,
            *ticks,
            *silence_min,
            *silence_max,
            *tolerance,
            *level,
            registry,
            odb,
        ),
        Command::Oracle {
            q,
            n,
            k,
            m,
            trials,
            subsets,
        } => cmd_oracle(cli, *q, *n, *k, *m, *trials, *subsets),
        Command::Audit { registry, odb } => cmd_audit(cli, registry, odb),
        Command::Bench {} => cmd_bench(cli),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(CliError::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
