//! Operator front end. Every command is a thin binding to one library
//! call. Chains persist as NDJSON under the data directory, the dataset
//! registry and profile store as JSON, so any state this tool builds can
//! be inspected, diffed, and tampered with for testing.
//!
//! Exit codes: 0 success, 1 error, 2 usage, 3 denied by policy or
//! verdict, 4 missing fixture, 5 corrupt chain, 6 endpoint unreachable.

use clap::{Parser, Subcommand};
use pdm_core::bench::{self, WorkloadSpec};
use pdm_core::contracts::audit::{audit_query, AuditFilter};
use pdm_core::contracts::policy::Operation;
use pdm_core::crypto::{KeyPair, PublicKey, Role};
use pdm_core::fixtures::{load_keypair, save_keypair, FixtureError};
use pdm_core::ledger::{ChainVerdict, Channel, Digest, Ledger, TxStatus};
use pdm_core::network::{NetworkConfig, TxKind};
use pdm_core::platform::{DatasetId, Platform, PlatformError};
use pdm_core::resource_server::{http, signed_request, ResourceServer, ERASE_ENDPOINT};
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

const EXIT_ERROR: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DENIED: u8 = 3;
const EXIT_MISSING: u8 = 4;
const EXIT_CORRUPT: u8 = 5;
const EXIT_UNREACHABLE: u8 = 6;

#[derive(Parser)]
#[command(name = "pdm", version, about = "Consent-managed personal data platform")]
struct Cli {
    /// State directory: chains, dataset registry, profile store.
    #[arg(long, global = true, default_value = "pdm-data")]
    data_dir: PathBuf,
    /// Machine-readable JSON on stdout instead of prose.
    #[arg(long, global = true)]
    json: bool,
    /// Base seed for nonces and generated keys; fixed seed, fixed outputs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Platform clock in ms; the clock never moves backwards.
    #[arg(long, global = true)]
    clock: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a keypair fixture file.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// ds | dc | dp | external
        #[arg(long, default_value = "external")]
        role: String,
    },
    /// Register a dataset: consent record plus first owner and controller tokens.
    Register {
        /// Registry name for the dataset.
        #[arg(long)]
        name: String,
        #[arg(long)]
        ds: PathBuf,
        #[arg(long)]
        dc: PathBuf,
        /// Controller operations, comma list.
        #[arg(long, default_value = "read,update")]
        ops: String,
    },
    /// Record the encrypted off-chain pointer and content digest.
    Upload {
        #[arg(long)]
        name: String,
        /// Uploader key file: subject or controller.
        #[arg(long)]
        by: PathBuf,
        #[arg(long)]
        pointer: String,
        /// File whose bytes are hashed as the content digest.
        #[arg(long)]
        data_file: Option<PathBuf>,
        /// Explicit content digest, 64 hex chars; alternative to --data-file.
        #[arg(long)]
        hash: Option<String>,
    },
    /// Three-party consent grant; prints the processor's access token.
    Grant {
        #[arg(long)]
        name: String,
        #[arg(long)]
        ds: PathBuf,
        #[arg(long)]
        dc: PathBuf,
        #[arg(long)]
        dp: PathBuf,
        #[arg(long)]
        op: String,
    },
    /// Revoke one operation; prints the regenerated token if one existed.
    Revoke {
        #[arg(long)]
        name: String,
        /// Subject or controller key file.
        #[arg(long)]
        by: PathBuf,
        /// Processor public key, hex.
        #[arg(long)]
        dp_pub: String,
        #[arg(long)]
        op: String,
    },
    /// Authorized read of the encrypted pointer plus the current token.
    Access {
        #[arg(long)]
        name: String,
        #[arg(long)]
        by: PathBuf,
        #[arg(long)]
        op: String,
        /// Dataset encryption key file; decrypts the pointer locally.
        #[arg(long)]
        enc_key: Option<PathBuf>,
    },
    /// Validate a token on chain; the decision commits either way.
    Validate {
        #[arg(long)]
        token: String,
        #[arg(long)]
        by: PathBuf,
        #[arg(long)]
        op: String,
    },
    /// Query the audit trail reconstructed from both chains.
    Audit {
        /// Data subject public key, hex.
        #[arg(long)]
        owner: Option<String>,
        #[arg(long)]
        controller: Option<String>,
        #[arg(long)]
        processor: Option<String>,
        #[arg(long)]
        from_ms: Option<u64>,
        #[arg(long)]
        to_ms: Option<u64>,
    },
    /// Recompute every block hash and linkage on both channels.
    VerifyChain,
    /// Drive the simulated network and print measurement rows as CSV.
    Bench {
        /// read | write
        #[arg(long, default_value = "read")]
        kind: String,
        /// loads | peers
        #[arg(long, default_value = "loads")]
        sweep: String,
        /// Load multiples of READ saturation, comma list.
        #[arg(long, default_value = "0.25,0.5,1,2")]
        loads: String,
        /// Peer counts for the peers sweep, comma list.
        #[arg(long, default_value = "4,8,16,32")]
        peers: String,
        /// Fixed offered load for the peers sweep, tx/s.
        #[arg(long, default_value_t = 250.0)]
        load_tps: f64,
        #[arg(long, default_value_t = 5_000.0)]
        duration_ms: f64,
        /// In-flight transaction cap shared by the simulated clients.
        #[arg(long, default_value_t = 500)]
        clients: usize,
        /// Network config TOML; defaults match the reference topology.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Host the resource server over HTTP, persisting after each request.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Resource-server client: one profile CRUD call over the socket.
    Profile {
        /// host:port of a running `pdm serve`.
        #[arg(long)]
        endpoint: String,
        /// create | read | update | delete
        #[arg(long)]
        op: String,
        #[arg(long)]
        profile: String,
        /// Requester key file; signs the validation payload locally.
        #[arg(long)]
        by: PathBuf,
        #[arg(long)]
        token: String,
        /// JSON object of profile attributes, for create and update.
        #[arg(long)]
        payload: Option<String>,
    },
    /// Erasure request over the socket; honored for the data subject only.
    Erase {
        #[arg(long)]
        endpoint: String,
        #[arg(long)]
        profile: String,
        #[arg(long)]
        by: PathBuf,
        #[arg(long)]
        token: String,
    },
    /// Scripted end-to-end walkthrough on a fresh in-memory platform.
    Demo,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<FixtureError> for Failure {
    fn from(e: FixtureError) -> Self {
        fail(EXIT_MISSING, e.to_string())
    }
}

impl From<PlatformError> for Failure {
    fn from(e: PlatformError) -> Self {
        let code = match &e {
            PlatformError::Rejected { .. } => EXIT_DENIED,
            PlatformError::MissingRecord(_) => EXIT_MISSING,
            _ => EXIT_ERROR,
        };
        fail(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        fail(EXIT_ERROR, e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

// ----- persistence ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Meta {
    seed: u64,
    runs: u64,
}

#[derive(Serialize, Deserialize, Clone)]
struct DatasetEntry {
    subject: String,
    controller: String,
    encryption: String,
    owner_token: String,
    controller_token: String,
    registered_tx: String,
}

impl DatasetEntry {
    fn dataset(&self) -> Result<DatasetId, Failure> {
        let pk = |s: &str| {
            PublicKey::from_hex(s).map_err(|e| fail(EXIT_CORRUPT, format!("registry: {e}")))
        };
        Ok(DatasetId {
            subject: pk(&self.subject)?,
            controller: pk(&self.controller)?,
            encryption: pk(&self.encryption)?,
        })
    }
}

type Registry = BTreeMap<String, DatasetEntry>;

struct State {
    dir: PathBuf,
    platform: Platform,
    registry: Registry,
    meta: Meta,
}

impl State {
    /// Loads chains, registry, and meta. The platform seed shifts with the
    /// run counter so nonces never repeat across invocations, yet a fixed
    /// --seed and a fixed command sequence reproduce outputs exactly.
    fn open(cli: &Cli) -> Result<State, Failure> {
        let dir = cli.data_dir.clone();
        let mut meta = match read_json::<Meta>(&dir.join("meta.json"))? {
            Some(meta) => meta,
            None => Meta {
                seed: cli.seed.unwrap_or(7),
                runs: 0,
            },
        };
        if let Some(seed) = cli.seed {
            meta.seed = seed;
        }
        let run_seed = meta
            .seed
            .wrapping_add(meta.runs.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut platform = Platform::with_seed(run_seed);
        if let Some(ledger) = load_ledger(&dir)? {
            platform.restore_ledger(ledger);
        }
        if let Some(clock) = cli.clock {
            platform.set_clock(clock);
        }
        let registry = read_json::<Registry>(&dir.join("datasets.json"))?.unwrap_or_default();
        Ok(State {
            dir,
            platform,
            registry,
            meta,
        })
    }

    fn dataset(&self, name: &str) -> Result<(DatasetId, &DatasetEntry), Failure> {
        let entry = self
            .registry
            .get(name)
            .ok_or_else(|| fail(EXIT_MISSING, format!("no dataset named {name} in registry")))?;
        Ok((entry.dataset()?, entry))
    }

    /// Persists chains, registry, and the bumped run counter.
    fn save(mut self) -> Result<(), Failure> {
        self.meta.runs += 1;
        save_ledger(&self.dir, self.platform.ledger())?;
        write_json(&self.dir.join("datasets.json"), &self.registry)?;
        write_json(&self.dir.join("meta.json"), &self.meta)?;
        Ok(())
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>, Failure> {
    if !path.exists() {
        return Ok(None);
    }
    let body = std::fs::read_to_string(path)?;
    serde_json::from_str(&body)
        .map(Some)
        .map_err(|e| fail(EXIT_CORRUPT, format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let body = serde_json::to_string_pretty(value).unwrap();
    std::fs::write(path, body + "\n")?;
    Ok(())
}

fn load_ledger(dir: &Path) -> Result<Option<Ledger>, Failure> {
    let chains = dir.join("chains");
    let mut ledger = Ledger::new();
    let mut found = false;
    for name in [
        pdm_core::ledger::CONSENT_CHANNEL,
        pdm_core::ledger::LOG_CHANNEL,
    ] {
        let path = chains.join(format!("{name}.ndjson"));
        if !path.exists() {
            continue;
        }
        found = true;
        let data = std::fs::read_to_string(&path)?;
        let channel = Channel::import_ndjson(name, &data)
            .map_err(|e| fail(EXIT_CORRUPT, format!("{}: {e}", path.display())))?;
        *ledger.channel_mut(name).unwrap() = channel;
    }
    Ok(found.then_some(ledger))
}

fn save_ledger(dir: &Path, ledger: &Ledger) -> Result<(), Failure> {
    let chains = dir.join("chains");
    std::fs::create_dir_all(&chains)?;
    for channel in ledger.channels() {
        let path = chains.join(format!("{}.ndjson", channel.name()));
        std::fs::write(path, channel.export_ndjson())?;
    }
    Ok(())
}

fn load_store(dir: &Path) -> Result<ResourceServer, Failure> {
    let path = dir.join("store.json");
    if !path.exists() {
        return Ok(ResourceServer::new());
    }
    let body = std::fs::read_to_string(&path)?;
    ResourceServer::import_json(&body)
        .map_err(|e| fail(EXIT_CORRUPT, format!("{}: {e}", path.display())))
}

// ----- helpers ----------------------------------------------------------

fn emit(json: bool, value: Value, human: String) {
    if json {
        println!("{}", serde_json::to_string_pretty(&value).unwrap());
    } else {
        println!("{human}");
    }
}

fn parse_op(s: &str) -> Result<Operation, Failure> {
    Operation::parse(s).ok_or_else(|| {
        fail(
            EXIT_USAGE,
            format!("unknown operation {s:?}; expected create|read|update|delete"),
        )
    })
}

fn parse_pk(s: &str) -> Result<PublicKey, Failure> {
    PublicKey::from_hex(s).map_err(|e| fail(EXIT_USAGE, format!("bad public key: {e}")))
}

fn short(hex: &str) -> &str {
    &hex[..hex.len().min(12)]
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match &cli.cmd {
        Cmd::Keygen { out, role } => keygen(&cli, out, role),
        Cmd::Register { name, ds, dc, ops } => register(&cli, name, ds, dc, ops),
        Cmd::Upload {
            name,
            by,
            pointer,
            data_file,
            hash,
        } => upload(&cli, name, by, pointer, data_file.as_deref(), hash.as_deref()),
        Cmd::Grant {
            name,
            ds,
            dc,
            dp,
            op,
        } => grant(&cli, name, ds, dc, dp, op),
        Cmd::Revoke {
            name,
            by,
            dp_pub,
            op,
        } => revoke(&cli, name, by, dp_pub, op),
        Cmd::Access {
            name,
            by,
            op,
            enc_key,
        } => access(&cli, name, by, op, enc_key.as_deref()),
        Cmd::Validate { token, by, op } => validate(&cli, token, by, op),
        Cmd::Audit {
            owner,
            controller,
            processor,
            from_ms,
            to_ms,
        } => audit(&cli, owner, controller, processor, *from_ms, *to_ms),
        Cmd::VerifyChain => verify_chain(&cli),
        Cmd::Bench {
            kind,
            sweep,
            loads,
            peers,
            load_tps,
            duration_ms,
            clients,
            config,
            out,
        } => run_bench(
            &cli,
            kind,
            sweep,
            loads,
            peers,
            *load_tps,
            *duration_ms,
            *clients,
            config.as_deref(),
            out.as_deref(),
        ),
        Cmd::Serve { bind } => serve(&cli, bind),
        Cmd::Profile {
            endpoint,
            op,
            profile,
            by,
            token,
            payload,
        } => profile_call(&cli, endpoint, op, profile, by, token, payload.as_deref()),
        Cmd::Erase {
            endpoint,
            profile,
            by,
            token,
        } => erase_call(&cli, endpoint, profile, by, token),
        Cmd::Demo => demo(&cli),
    }
}

// ----- commands ---------------------------------------------------------

fn keygen(cli: &Cli, out: &Path, role: &str) -> Result<u8, Failure> {
    let role = Role::from_str(role)
        .map_err(|_| fail(EXIT_USAGE, "role must be ds|dc|dp|external"))?;
    // Seeded generation mixes in the output path so distinct fixture
    // files never share a key under one seed.
    let kp = match cli.seed {
        Some(seed) => {
            let mix = Digest::of(out.display().to_string().as_bytes());
            let mut bytes = [0u8; 8];
            bytes.copy_from_slice(&mix.0[..8]);
            let mut rng =
                rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ u64::from_le_bytes(bytes));
            KeyPair::generate_from_rng(&mut rng)
        }
        None => KeyPair::generate().map_err(|e| fail(EXIT_ERROR, e.to_string()))?,
    };
    save_keypair(out, &kp, role)?;
    emit(
        cli.json,
        json!({ "public_key": kp.public.to_hex(), "role": role.as_str(), "path": out.display().to_string() }),
        format!(
            "wrote {} key {} to {}",
            role.as_str(),
            short(&kp.public.to_hex()),
            out.display()
        ),
    );
    Ok(0)
}

fn register(cli: &Cli, name: &str, ds: &Path, dc: &Path, ops: &str) -> Result<u8, Failure> {
    let mut state = State::open(cli)?;
    if state.registry.contains_key(name) {
        return Err(fail(EXIT_ERROR, format!("dataset {name} already registered")));
    }
    let (subject, _) = load_keypair(ds)?;
    let (controller, _) = load_keypair(dc)?;
    let controller_ops = Operation::parse_list(ops)
        .ok_or_else(|| fail(EXIT_USAGE, format!("bad operation list {ops:?}")))?;
    let (reg, enc) = state
        .platform
        .register(&subject, &controller, &controller_ops)?;

    // The dataset encryption private key goes to a fixture next to the
    // registry; hand it to the subject out of band.
    let enc_path = state.dir.join("keys").join(format!("{name}.enc.key"));
    std::fs::create_dir_all(enc_path.parent().unwrap())?;
    save_keypair(&enc_path, &enc, Role::External)?;

    let entry = DatasetEntry {
        subject: reg.dataset.subject.to_hex(),
        controller: reg.dataset.controller.to_hex(),
        encryption: reg.dataset.encryption.to_hex(),
        owner_token: reg.owner_token.clone(),
        controller_token: reg.controller_token.clone(),
        registered_tx: reg.tx_id.clone(),
    };
    state.registry.insert(name.to_string(), entry.clone());
    state.save()?;
    emit(
        cli.json,
        json!({
            "name": name,
            "subject": entry.subject,
            "controller": entry.controller,
            "encryption": entry.encryption,
            "owner_token": entry.owner_token,
            "controller_token": entry.controller_token,
            "tx_id": entry.registered_tx,
            "enc_key_file": enc_path.display().to_string(),
        }),
        format!(
            "registered {name} (tx {})\n  owner token      {}\n  controller token {}\n  enc key file     {}",
            entry.registered_tx,
            entry.owner_token,
            entry.controller_token,
            enc_path.display()
        ),
    );
    Ok(0)
}

fn upload(
    cli: &Cli,
    name: &str,
    by: &Path,
    pointer: &str,
    data_file: Option<&Path>,
    hash: Option<&str>,
) -> Result<u8, Failure> {
    let mut state = State::open(cli)?;
    let (dataset, _) = state.dataset(name)?;
    let (uploader, _) = load_keypair(by)?;
    let content_hash = match (data_file, hash) {
        (Some(path), None) => Digest::of(&std::fs::read(path)?),
        (None, Some(hex)) => Digest::from_hex(hex)
            .ok_or_else(|| fail(EXIT_USAGE, "hash must be 64 hex chars"))?,
        _ => {
            return Err(fail(
                EXIT_USAGE,
                "exactly one of --data-file or --hash is required",
            ))
        }
    };
    let committed = state
        .platform
        .upload(&dataset, &uploader, pointer.as_bytes(), content_hash)?;
    state.save()?;
    emit(
        cli.json,
        json!({ "tx_id": committed.tx_id, "content_hash": content_hash.to_hex() }),
        format!(
            "uploaded pointer for {name} (tx {}), digest {}",
            committed.tx_id,
            short(&content_hash.to_hex())
        ),
    );
    Ok(0)
}

fn grant(
    cli: &Cli,
    name: &str,
    ds: &Path,
    dc: &Path,
    dp: &Path,
    op: &str,
) -> Result<u8, Failure> {
    let mut state = State::open(cli)?;
    let (dataset, _) = state.dataset(name)?;
    let (subject, _) = load_keypair(ds)?;
    let (controller, _) = load_keypair(dc)?;
    let (processor, _) = load_keypair(dp)?;
    let op = parse_op(op)?;
    let token = state
        .platform
        .grant(&dataset, &subject, &controller, &processor, op)?;
    state.save()?;
    emit(
        cli.json,
        json!({ "access_token": token, "op": op.as_str() }),
        format!("granted {} on {name}; token {token}", op.as_str()),
    );
    Ok(0)
}

fn revoke(cli: &Cli, name: &str, by: &Path, dp_pub: &str, op: &str) -> Result<u8, Failure> {
    let mut state = State::open(cli)?;
    let (dataset, _) = state.dataset(name)?;
    let (signer, _) = load_keypair(by)?;
    let processor = parse_pk(dp_pub)?;
    let op = parse_op(op)?;
    let regenerated = state.platform.revoke(&dataset, &signer, processor, op)?;
    state.save()?;
    emit(
        cli.json,
        json!({ "op": op.as_str(), "regenerated_token": regenerated }),
        match &regenerated {
            Some(token) => format!(
                "revoked {} on {name}; superseding token {token}",
                op.as_str()
            ),
            None => format!("revoked {} on {name}; no token existed", op.as_str()),
        },
    );
    Ok(0)
}

fn access(
    cli: &Cli,
    name: &str,
    by: &Path,
    op: &str,
    enc_key: Option<&Path>,
) -> Result<u8, Failure> {
    let mut state = State::open(cli)?;
    let (dataset, _) = state.dataset(name)?;
    let (requester, _) = load_keypair(by)?;
    let op = parse_op(op)?;
    let outcome = state.platform.access(&dataset, &requester, op);
    // The denial is itself a committed transaction; persist before
    // reporting so the audit trail keeps it.
    let granted = match outcome {
        Ok(granted) => granted,
        Err(e) => {
            state.save()?;
            return Err(e.into());
        }
    };
    let pointer = match enc_key {
        Some(path) => {
            let (enc, _) = load_keypair(path)?;
            let bytes = enc
                .private
                .decrypt(&granted.en_pointer)
                .map_err(|e| fail(EXIT_ERROR, e.to_string()))?;
            Some(String::from_utf8_lossy(&bytes).into_owned())
        }
        None => None,
    };
    state.save()?;
    emit(
        cli.json,
        json!({
            "tx_id": granted.tx_id,
            "en_pointer": granted.en_pointer.to_hex(),
            "access_token": granted.access_token,
            "pointer": pointer,
        }),
        match &pointer {
            Some(p) => format!("access granted (tx {}); pointer {p}", granted.tx_id),
            None => format!(
                "access granted (tx {}); encrypted pointer {}…",
                granted.tx_id,
                short(&granted.en_pointer.to_hex())
            ),
        },
    );
    Ok(0)
}

fn validate(cli: &Cli, token: &str, by: &Path, op: &str) -> Result<u8, Failure> {
    let mut state = State::open(cli)?;
    let (holder, _) = load_keypair(by)?;
    let op = parse_op(op)?;
    let (verdict, committed) = state.platform.validate(token, &holder, op);
    state.save()?;
    emit(
        cli.json,
        json!({
            "accepted": verdict.accepted,
            "reason": verdict.reason,
            "holder": verdict.holder,
            "remaining_s": verdict.remaining_s,
            "tx_id": committed.tx_id,
        }),
        match (&verdict.accepted, &verdict.reason) {
            (true, _) => format!(
                "accepted for {} holder, {}s remaining (tx {})",
                verdict.holder.as_deref().unwrap_or("?"),
                verdict.remaining_s.unwrap_or(0),
                committed.tx_id
            ),
            (false, reason) => format!(
                "denied: {} (tx {})",
                reason.as_deref().unwrap_or("rejected"),
                committed.tx_id
            ),
        },
    );
    Ok(if verdict.accepted { 0 } else { EXIT_DENIED })
}

fn audit(
    cli: &Cli,
    owner: &Option<String>,
    controller: &Option<String>,
    processor: &Option<String>,
    from_ms: Option<u64>,
    to_ms: Option<u64>,
) -> Result<u8, Failure> {
    let state = State::open(cli)?;
    let parse = |s: &Option<String>| s.as_deref().map(parse_pk).transpose();
    let filter = AuditFilter {
        owner: parse(owner)?,
        controller: parse(controller)?,
        processor: parse(processor)?,
        from_ms,
        to_ms,
    };
    let entries = audit_query(state.platform.ledger(), &filter);
    if cli.json {
        let rows: Vec<Value> = entries
            .iter()
            .map(|e| {
                json!({
                    "who": e.who.to_hex(),
                    "what": e.what,
                    "when": e.when,
                    "which": e.which,
                    "verdict": e.verdict,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows).unwrap());
    } else {
        println!("{} entries", entries.len());
        for e in &entries {
            let verdict = match e.verdict {
                TxStatus::Success => "success",
                TxStatus::Rejected => "rejected",
            };
            println!(
                "{:>10}ms  {}  {:<28} {:<8} {}",
                e.when,
                short(&e.who.to_hex()),
                e.what,
                verdict,
                short(&e.which)
            );
        }
    }
    Ok(0)
}

fn verify_chain(cli: &Cli) -> Result<u8, Failure> {
    let state = State::open(cli)?;
    let mut rows = Vec::new();
    let mut corrupt = false;
    for channel in state.platform.ledger().channels() {
        let (ok, detail) = match channel.verify() {
            ChainVerdict::Ok => {
                if channel.state_matches_replay() {
                    (true, json!({ "verdict": "ok", "height": channel.height() }))
                } else {
                    (false, json!({ "verdict": "state_mismatch" }))
                }
            }
            ChainVerdict::Corrupt { height } => {
                (false, json!({ "verdict": "corrupt", "height": height }))
            }
        };
        corrupt |= !ok;
        rows.push(json!({ "channel": channel.name(), "result": detail }));
    }
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&rows).unwrap());
    } else {
        for row in &rows {
            println!(
                "{}: {}",
                row["channel"].as_str().unwrap(),
                serde_json::to_string(&row["result"]).unwrap()
            );
        }
    }
    Ok(if corrupt { EXIT_CORRUPT } else { 0 })
}

#[allow(clippy::too_many_arguments)]
fn run_bench(
    cli: &Cli,
    kind: &str,
    sweep: &str,
    loads: &str,
    peers: &str,
    load_tps: f64,
    duration_ms: f64,
    clients: usize,
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let net = match config {
        Some(path) => NetworkConfig::load(path).map_err(|e| fail(EXIT_ERROR, e.to_string()))?,
        None => NetworkConfig::default(),
    };
    let kind = match kind {
        "read" => TxKind::Read,
        "write" => TxKind::Write,
        other => return Err(fail(EXIT_USAGE, format!("kind must be read|write, got {other}"))),
    };
    let spec = WorkloadSpec {
        kind,
        duration_ms,
        client_count: clients,
        seed: cli.seed.unwrap_or(7),
        ..WorkloadSpec::default()
    };
    let parse_csv = |s: &str| -> Result<Vec<f64>, Failure> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| fail(EXIT_USAGE, format!("bad number {p:?}")))
            })
            .collect()
    };
    let report = match sweep {
        "loads" => {
            let multiples = parse_csv(loads)?;
            let base = bench::read_saturation_tps(&net);
            bench::sweep_loads(&net, &spec, base, &multiples)
        }
        "peers" => {
            let counts: Vec<usize> = parse_csv(peers)?.into_iter().map(|v| v as usize).collect();
            let spec = WorkloadSpec {
                offered_load_tps: load_tps,
                ..spec
            };
            bench::sweep_peers(&net, &spec, &counts)
        }
        other => return Err(fail(EXIT_USAGE, format!("sweep must be loads|peers, got {other}"))),
    }
    .map_err(|e| fail(EXIT_ERROR, e.to_string()))?;

    let csv = report.to_csv();
    match out {
        Some(path) => {
            std::fs::write(path, &csv)?;
            emit(
                cli.json,
                json!({ "rows": report.points.len(), "csv": path.display().to_string() }),
                format!("{} rows -> {}", report.points.len(), path.display()),
            );
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

fn serve(cli: &Cli, bind: &str) -> Result<u8, Failure> {
    let state = State::open(cli)?;
    let store = load_store(&state.dir)?;
    let dir = state.dir.clone();
    let shared: http::Shared =
        std::sync::Arc::new(std::sync::Mutex::new((state.platform, store)));
    // Persist chains and store under the request lock, so a killed host
    // loses nothing that was already answered.
    let flush: http::Flush = Box::new(move |platform, server| {
        let _ = save_ledger(&dir, platform.ledger());
        let _ = std::fs::write(dir.join("store.json"), server.export_json());
    });
    let server = http::serve_hooked(bind, shared, Some(flush))
        .map_err(|e| fail(EXIT_UNREACHABLE, format!("bind {bind}: {e}")))?;
    emit(
        cli.json,
        json!({ "listening": server.addr().to_string() }),
        format!("listening on {}", server.addr()),
    );
    // The line must reach pipes before we park; callers wait for it.
    std::io::stdout().flush().ok();
    loop {
        std::thread::park();
    }
}

fn client_nonce(cli: &Cli) -> String {
    match cli.seed {
        Some(seed) => format!("{seed:016x}"),
        None => {
            let mut bytes = [0u8; 8];
            rand::rngs::OsRng.fill_bytes(&mut bytes);
            hex::encode(bytes)
        }
    }
}

fn profile_call(
    cli: &Cli,
    endpoint: &str,
    op: &str,
    profile: &str,
    by: &Path,
    token: &str,
    payload: Option<&str>,
) -> Result<u8, Failure> {
    let (holder, _) = load_keypair(by)?;
    let op = parse_op(op)?;
    let payload: Option<Value> = payload
        .map(|s| serde_json::from_str(s))
        .transpose()
        .map_err(|e| fail(EXIT_USAGE, format!("payload must be JSON: {e}")))?;
    let req = signed_request(&holder, token, op, Some(profile), payload, &client_nonce(cli));
    send_request(cli, endpoint, &req, req.api_endpoint.clone())
}

fn erase_call(
    cli: &Cli,
    endpoint: &str,
    profile: &str,
    by: &Path,
    token: &str,
) -> Result<u8, Failure> {
    let (holder, _) = load_keypair(by)?;
    let req = signed_request(
        &holder,
        token,
        Operation::Delete,
        Some(profile),
        None,
        &client_nonce(cli),
    );
    send_request(cli, endpoint, &req, ERASE_ENDPOINT.to_string())
}

/// Sends one signed resource request over the socket and maps the
/// response status to the exit code.
fn send_request(
    cli: &Cli,
    endpoint: &str,
    req: &pdm_core::resource_server::ApiRequest,
    path: String,
) -> Result<u8, Failure> {
    let query = format!(
        "{path}?pubkey={}&signature={}&token={}&operation={}&profile_id={}&nonce={}",
        percent_encode(&req.params.pubkey),
        percent_encode(&req.params.signature),
        percent_encode(&req.params.token),
        percent_encode(&req.params.operation),
        percent_encode(req.params.profile_id.as_deref().unwrap_or("")),
        percent_encode(req.params.nonce.as_deref().unwrap_or("")),
    );
    let body = req.payload.as_ref().map(|v| v.to_string());
    let (code, value) = http_post(endpoint, &query, body.as_deref())?;
    emit(
        cli.json,
        value.clone(),
        format!(
            "{} -> {} {}",
            path,
            code,
            serde_json::to_string(&value["body"]).unwrap_or_default()
        ),
    );
    Ok(match code {
        200 => 0,
        403 => EXIT_DENIED,
        404 => EXIT_MISSING,
        _ => EXIT_ERROR,
    })
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

fn http_post(endpoint: &str, path_query: &str, body: Option<&str>) -> Result<(u16, Value), Failure> {
    use std::io::Read;
    let unreachable = |e: std::io::Error| fail(EXIT_UNREACHABLE, format!("{endpoint}: {e}"));
    let mut stream = std::net::TcpStream::connect(endpoint).map_err(unreachable)?;
    let body = body.unwrap_or("");
    write!(
        stream,
        "POST {path_query} HTTP/1.1\r\nHost: {endpoint}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .map_err(unreachable)?;
    let mut raw = String::new();
    stream.read_to_string(&mut raw).map_err(unreachable)?;
    let code: u16 = raw
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| fail(EXIT_ERROR, "malformed response status line"))?;
    let json_body = raw
        .split("\r\n\r\n")
        .nth(1)
        .ok_or_else(|| fail(EXIT_ERROR, "response without body"))?;
    let value =
        serde_json::from_str(json_body).map_err(|e| fail(EXIT_ERROR, format!("bad body: {e}")))?;
    Ok((code, value))
}

// ----- demo -------------------------------------------------------------

/// Scripted walkthrough on a fresh in-memory platform: registration,
/// upload, grant, authorized access, validation, revocation, the denial
/// that follows, erasure, and the audit trail the chains kept of it all.
fn demo(cli: &Cli) -> Result<u8, Failure> {
    let seed = cli.seed.unwrap_or(7);
    let mut platform = Platform::with_seed(seed);
    let mut server = ResourceServer::new();
    let mut steps: Vec<Value> = Vec::new();
    let note = |steps: &mut Vec<Value>, title: &str, detail: Value| {
        if !cli.json {
            println!("{:>2}. {title}", steps.len() + 1);
            println!("    {}", serde_json::to_string(&detail).unwrap());
        }
        steps.push(json!({ "step": title, "detail": detail }));
    };

    let subject = platform.generate_keypair();
    let controller = platform.generate_keypair();
    let processor = platform.generate_keypair();
    note(
        &mut steps,
        "generate actor keypairs",
        json!({
            "subject": short(&subject.public.to_hex()),
            "controller": short(&controller.public.to_hex()),
            "processor": short(&processor.public.to_hex()),
        }),
    );

    let ops = Operation::parse_list("read,update").unwrap();
    let (reg, _enc) = platform.register(&subject, &controller, &ops)?;
    let dataset = reg.dataset;
    note(
        &mut steps,
        "register dataset: consent record plus first tokens",
        json!({ "tx": reg.tx_id, "owner_token": short(&reg.owner_token) }),
    );

    let create = server.handle(
        &mut platform,
        &signed_request(
            &subject,
            &reg.owner_token,
            Operation::Create,
            Some("demo-profile"),
            Some(json!({ "name": "alice", "mbox": "mailto:alice@example.org" })),
            "demo-create",
        ),
    );
    let profile_hash = server.document("demo-profile").unwrap().content_hash();
    let upload = platform.upload(
        &dataset,
        &subject,
        b"https://rs.local/profiles/demo-profile",
        profile_hash,
    )?;
    note(
        &mut steps,
        "create profile at the resource server, record pointer and digest on chain",
        json!({
            "create": create.status,
            "create_audit": create.audit_ref,
            "upload_tx": upload.tx_id,
            "integrity": server.integrity_check(&platform, "demo-profile").map_err(|e| fail(EXIT_ERROR, e.to_string()))?,
        }),
    );

    platform.advance_clock(1);
    let token = platform.grant(&dataset, &subject, &controller, &processor, Operation::Read)?;
    note(
        &mut steps,
        "three-party grant of read",
        json!({ "access_token": short(&token) }),
    );

    let granted = platform.access(&dataset, &processor, Operation::Read)?;
    note(
        &mut steps,
        "processor reads the encrypted pointer",
        json!({ "tx": granted.tx_id, "en_pointer": short(&granted.en_pointer.to_hex()) }),
    );

    let read = server.handle(
        &mut platform,
        &signed_request(
            &processor,
            &token,
            Operation::Read,
            Some("demo-profile"),
            None,
            "demo-read",
        ),
    );
    note(
        &mut steps,
        "processor fetches the profile with its token",
        json!({ "status": read.status, "audit": read.audit_ref }),
    );

    let denied_update = server.handle(
        &mut platform,
        &signed_request(
            &processor,
            &token,
            Operation::Update,
            Some("demo-profile"),
            Some(json!({ "name": "mallory" })),
            "demo-update",
        ),
    );
    note(
        &mut steps,
        "out-of-scope update is denied, and the denial is audited",
        json!({ "status": denied_update.status, "reason": denied_update.reason(), "audit": denied_update.audit_ref }),
    );

    platform.advance_clock(1);
    let regenerated = platform.revoke(&dataset, &subject, processor.public, Operation::Read)?;
    let after_revoke = server.handle(
        &mut platform,
        &signed_request(
            &processor,
            &token,
            Operation::Read,
            Some("demo-profile"),
            None,
            "demo-stale",
        ),
    );
    note(
        &mut steps,
        "subject revokes read; the old token stops validating",
        json!({
            "regenerated_token": regenerated.as_deref().map(short),
            "stale_read": after_revoke.status,
            "reason": after_revoke.reason(),
        }),
    );

    let erased = server.erase(
        &mut platform,
        &signed_request(
            &subject,
            &reg.owner_token,
            Operation::Delete,
            Some("demo-profile"),
            None,
            "demo-erase",
        ),
    );
    note(
        &mut steps,
        "subject exercises erasure",
        json!({ "status": erased.status, "profiles_left": server.profile_count() }),
    );

    let entries = audit_query(platform.ledger(), &AuditFilter::default());
    let verdicts = platform
        .ledger()
        .channels()
        .iter()
        .map(|c| matches!(c.verify(), ChainVerdict::Ok))
        .collect::<Vec<_>>();
    note(
        &mut steps,
        "audit trail reconstructed from the chains",
        json!({
            "entries": entries.len(),
            "chains_verify": verdicts,
        }),
    );
    if !cli.json {
        for e in &entries {
            let verdict = match e.verdict {
                TxStatus::Success => "success",
                TxStatus::Rejected => "rejected",
            };
            println!(
                "      {:>6}ms  {}  {:<28} {}",
                e.when,
                short(&e.who.to_hex()),
                e.what,
                verdict
            );
        }
    }

    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({ "seed": seed, "steps": steps })).unwrap()
        );
    }
    Ok(0)
}
