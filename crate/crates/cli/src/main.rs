//! `meshauth` — command-line front end for the mesh authentication toolkit:
//! parameter generation, ring-signature and key-exchange demos, key-validity
//! calculators, scenario simulation, and the self-test suites.
//!
//! Every subcommand that takes `--seed` is bit-reproducible. Exit codes:
//! 0 success, 1 verification or assertion failure, 2 usage or configuration
//! error.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use meshauth_core::anonake::{
    client_round1, client_round3, encode_round1, encode_round2, ReplayCache, ServerKeyMaterial,
    ServerReject,
};
use meshauth_core::keysched::{
    correction_factor, current_key_index, remaining_validity, request_trigger_index, KeyList,
};
use meshauth_core::numtheory::{gen_group_params, hash, uint_to_hex, PrgStream};
use meshauth_core::ringsig::{ring_sign, ring_verify, UserKeyMaterial, UserPublicKey};
use meshauth_core::selftest::{self, KeyPairFile};
use meshauth_core::timebase::Seconds;
use meshauth_sim::ScenarioConfig;
use num_bigint::BigUint;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "meshauth", version, about = "Mesh authentication toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate discrete-log group parameters and a key pair.
    Params(ParamsArgs),
    /// Sign and verify one ring signature, printing the transcript.
    Ringsig(RingsigArgs),
    /// Run the three-round anonymous key exchange end to end.
    Ake(AkeArgs),
    /// Key-validity calculator: key index, residual validity, correction
    /// factor, and request trigger.
    Sched(SchedArgs),
    /// Run a scenario file through the mesh simulator.
    Simulate(SimulateArgs),
    /// Run the library invariant suites, or validate a parameter file.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct ParamsArgs {
    #[command(subcommand)]
    action: ParamsAction,
}

#[derive(Subcommand)]
enum ParamsAction {
    /// Generate parameters and a key pair, writing JSON to --out.
    Gen {
        #[arg(long, default_value_t = 64)]
        bit_len: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path for the key-pair file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Owner identifier recorded in the file.
        #[arg(long, default_value = "user-1")]
        owner: String,
    },
}

#[derive(Args)]
struct RingsigArgs {
    #[command(subcommand)]
    action: RingsigAction,
}

#[derive(Subcommand)]
enum RingsigAction {
    /// Generate a ring, sign with one member, verify, print the signature.
    Demo {
        #[arg(long, default_value_t = 3)]
        ring_size: u32,
        #[arg(long, default_value_t = 32)]
        bit_len: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct AkeArgs {
    #[command(subcommand)]
    action: AkeAction,
}

#[derive(Subcommand)]
enum AkeAction {
    /// Run client and server through all three rounds, printing each
    /// message as a JSON line and checking both sides agree on the key.
    Demo {
        #[arg(long, default_value_t = 3)]
        ring_size: u32,
        #[arg(long, default_value_t = 32)]
        bit_len: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt one field in flight: R, sigma, or h.
        #[arg(long, value_parser = ["R", "sigma", "h"])]
        tamper: Option<String>,
    },
}

#[derive(Args)]
struct SchedArgs {
    /// Key-list generation timestamp, decimal seconds.
    #[arg(long)]
    ts_kl: String,
    /// Per-key validity, decimal seconds.
    #[arg(long)]
    timeout: String,
    #[arg(long)]
    cardinality: u32,
    /// Evaluation instant, decimal seconds.
    #[arg(long)]
    t_now: String,
    /// Last measured response time, decimal seconds.
    #[arg(long)]
    t_last: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Metrics output file; JSON lines go to stdout when omitted.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Validate a parameter or key-pair JSON file instead of running the
    /// full suites.
    #[arg(long)]
    validate: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Params(args) => cmd_params(args),
        Command::Ringsig(args) => cmd_ringsig(args),
        Command::Ake(args) => cmd_ake(args),
        Command::Sched(args) => cmd_sched(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Selftest(args) => cmd_selftest(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

const VERIFY_FAILED: u8 = 1;

fn seed_bytes(seed: u64) -> [u8; 8] {
    seed.to_be_bytes()
}

fn make_users(bit_len: u32, n: u32, seed: u64) -> Result<Vec<UserKeyMaterial>> {
    (0..n)
        .map(|i| {
            let gseed = hash(&[&seed_bytes(seed), b"user-group", &i.to_be_bytes()]);
            let params = gen_group_params(bit_len, gseed.as_bytes())?;
            let mut rng = PrgStream::new(gseed.as_bytes(), b"user-key");
            Ok(UserKeyMaterial::generate(
                format!("user-{i}"),
                params,
                &mut rng,
            )?)
        })
        .collect()
}

fn make_server(bit_len: u32, seed: u64) -> Result<ServerKeyMaterial> {
    let gseed = hash(&[&seed_bytes(seed), b"server-group"]);
    let params = gen_group_params(bit_len, gseed.as_bytes())?;
    let mut rng = PrgStream::new(gseed.as_bytes(), b"server-key");
    Ok(ServerKeyMaterial::generate(params, &mut rng)?)
}

fn cmd_params(args: ParamsArgs) -> Result<ExitCode> {
    let ParamsAction::Gen {
        bit_len,
        seed,
        out,
        owner,
    } = args.action;
    let params = gen_group_params(bit_len, &seed_bytes(seed))
        .map_err(|e| anyhow!("--bit-len: {e}"))?;
    let mut rng = PrgStream::new(&seed_bytes(seed), b"params-keypair");
    let key = UserKeyMaterial::generate(owner.clone(), params.clone(), &mut rng)?;
    let w = params.byte_len();
    let file = KeyPairFile {
        group: (&params).into(),
        owner,
        x: uint_to_hex(key.secret_exponent(), w),
        y: uint_to_hex(&key.public().y, w),
    };
    let text = serde_json::to_string_pretty(&file)?;
    match out {
        Some(path) => fs::write(&path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    let fingerprint = hash(&[
        file.group.p.as_bytes(),
        file.group.q.as_bytes(),
        file.group.g.as_bytes(),
        file.y.as_bytes(),
    ]);
    println!("public fingerprint: {fingerprint}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_ringsig(args: RingsigArgs) -> Result<ExitCode> {
    let RingsigAction::Demo {
        ring_size,
        bit_len,
        seed,
    } = args.action;
    if ring_size == 0 {
        bail!("--ring-size must be at least 1");
    }
    let users = make_users(bit_len, ring_size, seed)?;
    let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
    let server = make_server(bit_len, seed)?;
    let mut rng = PrgStream::new(&seed_bytes(seed), b"ringsig-demo");

    // Stand-in DH residues of the kind the key-exchange layer supplies.
    let x1 = rng.draw_nonzero_below(server.params().q())?;
    let xa = rng.draw_nonzero_below(server.params().q())?;
    let big_r = meshauth_core::numtheory::mod_exp(server.params().g(), &x1, server.params().p())?;
    let big_v = meshauth_core::numtheory::mod_exp(server.params().g(), &xa, server.params().p())?;
    let k = hash(&[&seed_bytes(seed), b"ringsig-demo-key"]);

    let signer = (seed % ring_size as u64) as usize;
    let mut sig = ring_sign(&ring, signer, &users[signer], &k, &big_v, &big_r, &mut rng)?;
    sig.dh_byte_len = server.params().byte_len();
    println!("{}", String::from_utf8_lossy(&sig.to_json_bytes()));
    match ring_verify(&sig, &k) {
        Ok(()) => {
            println!("verified: accept (ring of {ring_size}, {bit_len}-bit groups)");
            Ok(ExitCode::SUCCESS)
        }
        Err(reason) => {
            eprintln!("verification failed: {reason}");
            Ok(ExitCode::from(VERIFY_FAILED))
        }
    }
}

fn cmd_ake(args: AkeArgs) -> Result<ExitCode> {
    let AkeAction::Demo {
        ring_size,
        bit_len,
        seed,
        tamper,
    } = args.action;
    if ring_size == 0 {
        bail!("--ring-size must be at least 1");
    }
    let users = make_users(bit_len, ring_size, seed)?;
    let ring: Vec<UserPublicKey> = users.iter().map(|u| u.public().clone()).collect();
    let server = make_server(bit_len, seed)?;
    let mut crng = PrgStream::new(&seed_bytes(seed), b"ake-client");
    let mut srng = PrgStream::new(&seed_bytes(seed), b"ake-server");
    let mut replay = ReplayCache::new(16);

    let signer = (seed % ring_size as u64) as usize;
    let (mut sig, l, mut state) =
        client_round1(&ring, signer, &users[signer], server.public(), &mut crng)?;

    match tamper.as_deref() {
        Some("R") => {
            sig.big_r = (&sig.big_r + 1u32) % server.params().p();
            if sig.big_r == BigUint::from(0u32) {
                sig.big_r = BigUint::from(1u32);
            }
        }
        Some("sigma") => sig.pairs[0].alpha += 1u32,
        _ => {}
    }

    let m1 = encode_round1(&sig, &l);
    println!(
        "{}",
        serde_json::json!({
            "round": 1,
            "dir": "client->as",
            "bytes": m1.len(),
            "payload": serde_json::from_slice::<serde_json::Value>(&m1[4..])?,
        })
    );

    let accept = match meshauth_core::anonake::server_round2(
        &sig,
        &l,
        &server,
        &mut srng,
        &mut replay,
    ) {
        Ok(accept) => accept,
        Err(reject) => {
            let reason = match reject {
                ServerReject::TagMismatch => "tag-mismatch",
                ServerReject::RingInvalid(_) => "ring-invalid",
                ServerReject::Structural(_) => "structural",
                ServerReject::Replay => "replay",
            };
            println!(
                "{}",
                serde_json::json!({"round": 2, "result": "reject", "reason": reason})
            );
            eprintln!("server rejected round 1: {reject}");
            return Ok(ExitCode::from(VERIFY_FAILED));
        }
    };

    let mut reply = accept.reply.clone();
    if tamper.as_deref() == Some("h") {
        reply.h = hash(&[b"tampered-h"]);
    }
    let m2 = encode_round2(&reply);
    println!(
        "{}",
        serde_json::json!({
            "round": 2,
            "dir": "as->client",
            "bytes": m2.len(),
            "payload": serde_json::from_slice::<serde_json::Value>(&m2[4..])?,
        })
    );

    match client_round3(&mut state, server.public(), &reply.h, &reply.y, &reply.l) {
        Ok(key) => {
            let w = server.params().byte_len();
            let client_hex = uint_to_hex(&key.k_s, w);
            let server_hex = uint_to_hex(&accept.k_s, w);
            let matched = client_hex == server_hex;
            println!(
                "{}",
                serde_json::json!({
                    "round": 3,
                    "result": "accept",
                    "k_s_client": client_hex,
                    "k_s_server": server_hex,
                    "match": matched,
                })
            );
            if !matched {
                eprintln!("session keys disagree");
                return Ok(ExitCode::from(VERIFY_FAILED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(err) => {
            println!(
                "{}",
                serde_json::json!({"round": 3, "result": "reject", "reason": "server-auth-failed"})
            );
            eprintln!("client rejected round 2: {err}");
            Ok(ExitCode::from(VERIFY_FAILED))
        }
    }
}

fn cmd_sched(args: SchedArgs) -> Result<ExitCode> {
    let parse = |name: &str, value: &str| -> Result<Seconds> {
        value
            .parse()
            .map_err(|e| anyhow!("--{name}: {e}"))
    };
    let ts_kl = parse("ts-kl", &args.ts_kl)?;
    let timeout = parse("timeout", &args.timeout)?;
    let t_now = parse("t-now", &args.t_now)?;
    if !timeout.is_positive() {
        bail!("--timeout must be positive");
    }
    if args.cardinality == 0 {
        bail!("--cardinality must be at least 1");
    }
    if t_now < ts_kl {
        bail!("--t-now must not precede --ts-kl");
    }
    let keys = (0..args.cardinality)
        .map(|i| (i as u64).to_be_bytes().to_vec())
        .collect();
    let list = KeyList::new(keys, ts_kl, timeout, 1)?;
    let key_idx = current_key_index(t_now, &list)?;
    let t_i = remaining_validity(t_now, &list)?;
    let c = match &args.t_last {
        Some(raw) => {
            let t_last = parse("t-last", raw)?;
            if t_last.is_negative() {
                bail!("--t-last must be non-negative");
            }
            correction_factor(t_last, timeout)
        }
        None => 0,
    };
    let trigger = request_trigger_index(args.cardinality, c);
    println!(
        "{}",
        serde_json::json!({
            "key_idx": key_idx,
            "T_i": t_i.to_string(),
            "c": c,
            "trigger_index": trigger,
        })
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let config = match ScenarioConfig::from_json(&text) {
        Ok(config) => config,
        Err(err) => {
            eprint!("{err}");
            return Ok(ExitCode::from(2));
        }
    };
    let out = meshauth_sim::run(&config).map_err(|e| anyhow!("{e}"))?;
    match &args.metrics {
        Some(path) => {
            let mut file = fs::File::create(path)
                .with_context(|| format!("creating {}", path.display()))?;
            for record in &out.metrics {
                writeln!(file, "{}", record.to_json_line())?;
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for record in &out.metrics {
                writeln!(lock, "{}", record.to_json_line())?;
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&out.summary)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(args: SelftestArgs) -> Result<ExitCode> {
    if let Some(path) = args.validate {
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        return match selftest::validate_file(&text) {
            Ok(report) => {
                println!("ok: {report}");
                Ok(ExitCode::SUCCESS)
            }
            Err(reason) => {
                eprintln!("invalid: {reason}");
                Ok(ExitCode::from(VERIFY_FAILED))
            }
        };
    }
    let results = selftest::run_all(args.seed);
    let mut failed = 0;
    for r in &results {
        let status = if r.passed { "pass" } else { "FAIL" };
        println!("{status}  {:28} {}", r.name, r.detail);
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} suite(s) failed");
        Ok(ExitCode::from(VERIFY_FAILED))
    } else {
        println!("all {} suites passed", results.len());
        Ok(ExitCode::SUCCESS)
    }
}
