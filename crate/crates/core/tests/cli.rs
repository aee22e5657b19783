//! End-to-end command-line tests: every command runs as a real process
//! against a scratch data directory, and the JSON output shapes are
//! pinned so scripts built on them keep working.

use serde_json::Value;
use std::io::BufRead;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn pdm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn pdm")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn keys_of(v: &Value) -> Vec<&str> {
    v.as_object()
        .expect("object")
        .keys()
        .map(String::as_str)
        .collect()
}

/// Generates the three actor fixtures and registers one dataset named
/// `alice`; returns (owner_token, grant token for dp read).
fn seed_world(dir: &Path) -> (String, String) {
    for (file, role) in [("ds.key", "ds"), ("dc.key", "dc"), ("dp.key", "dp")] {
        let out = pdm(dir, &["--seed", "11", "keygen", "--out", file, "--role", role]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = pdm(
        dir,
        &[
            "--seed", "11", "--json", "register", "--name", "alice", "--ds", "ds.key", "--dc",
            "dc.key",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let reg = stdout_json(&out);
    let owner_token = reg["owner_token"].as_str().unwrap().to_string();

    let out = pdm(
        dir,
        &[
            "--seed", "11", "--json", "grant", "--name", "alice", "--ds", "ds.key", "--dc",
            "dc.key", "--dp", "dp.key", "--op", "read",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let token = stdout_json(&out)["access_token"]
        .as_str()
        .unwrap()
        .to_string();
    (owner_token, token)
}

#[test]
fn keygen_writes_loadable_deterministic_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdm(
        dir.path(),
        &["--seed", "5", "--json", "keygen", "--out", "a.key", "--role", "ds"],
    );
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(keys_of(&v), ["path", "public_key", "role"]);
    assert_eq!(v["role"], "data_subject");

    let (kp, role) = pdm_core::fixtures::load_keypair(&dir.path().join("a.key")).unwrap();
    assert_eq!(kp.public.to_hex(), v["public_key"].as_str().unwrap());
    assert_eq!(role, pdm_core::crypto::Role::DataSubject);

    // Same seed, same path: same key. Different path: different key.
    let again = pdm(
        dir.path(),
        &["--seed", "5", "--json", "keygen", "--out", "a.key", "--role", "ds"],
    );
    assert_eq!(stdout_json(&again)["public_key"], v["public_key"]);
    let other = pdm(
        dir.path(),
        &["--seed", "5", "--json", "keygen", "--out", "b.key", "--role", "ds"],
    );
    assert_ne!(stdout_json(&other)["public_key"], v["public_key"]);
}

#[test]
fn consent_workflow_round_trips_with_policy_denials() {
    let dir = tempfile::tempdir().unwrap();
    let (_, token) = seed_world(dir.path());

    let out = pdm(
        dir.path(),
        &[
            "--json", "upload", "--name", "alice", "--by", "ds.key", "--pointer",
            "s3://pdm/alice", "--hash", &"ab".repeat(32),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(keys_of(&stdout_json(&out)), ["content_hash", "tx_id"]);

    // The processor validates and reads within its granted scope.
    let out = pdm(
        dir.path(),
        &[
            "--json", "validate", "--token", &token, "--by", "dp.key", "--op", "read",
        ],
    );
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(
        keys_of(&v),
        ["accepted", "holder", "reason", "remaining_s", "tx_id"]
    );
    assert_eq!(v["accepted"], true);
    assert_eq!(v["holder"], "processor");

    let out = pdm(
        dir.path(),
        &["--json", "access", "--name", "alice", "--by", "dp.key", "--op", "read"],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(
        keys_of(&stdout_json(&out)),
        ["access_token", "en_pointer", "pointer", "tx_id"]
    );

    // Decrypting locally with the dataset key recovers the pointer.
    let out = pdm(
        dir.path(),
        &[
            "--json", "access", "--name", "alice", "--by", "ds.key", "--op", "read",
            "--enc-key", "pdm-data/keys/alice.enc.key",
        ],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["pointer"], "s3://pdm/alice");

    // Out-of-scope access is a committed rejection: exit 3, reason policy.
    let out = pdm(
        dir.path(),
        &["access", "--name", "alice", "--by", "dp.key", "--op", "delete"],
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("policy"));

    // Revocation supersedes the old token on chain.
    let dp_pub = stdout_json(&pdm(
        dir.path(),
        &["--seed", "11", "--json", "keygen", "--out", "dp.key", "--role", "dp"],
    ))["public_key"]
        .as_str()
        .unwrap()
        .to_string();
    let out = pdm(
        dir.path(),
        &[
            "--json", "revoke", "--name", "alice", "--by", "ds.key", "--dp-pub", &dp_pub,
            "--op", "read",
        ],
    );
    assert_eq!(code(&out), 0);
    assert!(stdout_json(&out)["regenerated_token"].is_string());

    let out = pdm(
        dir.path(),
        &[
            "--json", "validate", "--token", &token, "--by", "dp.key", "--op", "read",
        ],
    );
    assert_eq!(code(&out), 3);
    let v = stdout_json(&out);
    assert_eq!(v["accepted"], false);
    assert_eq!(v["reason"], "unknown_token");
}

#[test]
fn audit_lists_every_decision_and_filters_by_party() {
    let dir = tempfile::tempdir().unwrap();
    let (_, token) = seed_world(dir.path());
    pdm(
        dir.path(),
        &["validate", "--token", &token, "--by", "dp.key", "--op", "update"],
    );

    let all = stdout_json(&pdm(dir.path(), &["--json", "audit"]));
    let rows = all.as_array().unwrap();
    // registration, grant, and the rejected out-of-scope validation.
    assert!(rows.len() >= 3, "only {} audit rows", rows.len());
    assert_eq!(
        keys_of(&rows[0]),
        ["verdict", "what", "when", "which", "who"]
    );
    assert!(rows
        .iter()
        .any(|r| r["what"] == "token_validation:update" && r["verdict"] == "rejected"));

    let subject_hex = stdout_json(&pdm(
        dir.path(),
        &["--seed", "11", "--json", "keygen", "--out", "ds.key", "--role", "ds"],
    ))["public_key"]
        .as_str()
        .unwrap()
        .to_string();
    let owned = stdout_json(&pdm(dir.path(), &["--json", "audit", "--owner", &subject_hex]));
    assert_eq!(owned.as_array().unwrap().len(), rows.len());

    let dp_hex = stdout_json(&pdm(
        dir.path(),
        &["--seed", "11", "--json", "keygen", "--out", "dp.key", "--role", "dp"],
    ))["public_key"]
        .as_str()
        .unwrap()
        .to_string();
    let none = stdout_json(&pdm(dir.path(), &["--json", "audit", "--owner", &dp_hex]));
    assert_eq!(none.as_array().unwrap().len(), 0);
}

#[test]
fn verify_chain_pinpoints_tampered_blocks() {
    let dir = tempfile::tempdir().unwrap();
    seed_world(dir.path());

    let out = pdm(dir.path(), &["--json", "verify-chain"]);
    assert_eq!(code(&out), 0);
    for row in stdout_json(&out).as_array().unwrap() {
        assert_eq!(row["result"]["verdict"], "ok");
    }

    // Flip one committed byte; the hash chain must name the block.
    let chain = dir.path().join("pdm-data/chains/3A_channel.ndjson");
    let tampered = std::fs::read_to_string(&chain)
        .unwrap()
        .replace("\"function\":\"grant_consent\"", "\"function\":\"grant_consenT\"");
    std::fs::write(&chain, tampered).unwrap();

    let out = pdm(dir.path(), &["--json", "verify-chain"]);
    assert_eq!(code(&out), 5);
    let rows = stdout_json(&out);
    let consent = rows
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["channel"] == "3A_channel")
        .unwrap();
    assert_eq!(consent["result"]["verdict"], "corrupt");
    assert_eq!(consent["result"]["height"], 1);
}

#[test]
fn serve_answers_the_socket_and_persists_every_request() {
    let dir = tempfile::tempdir().unwrap();
    let (owner_token, _) = seed_world(dir.path());

    let mut child = Command::new(env!("CARGO_BIN_EXE_pdm"))
        .current_dir(dir.path())
        .args(["--json", "serve", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .expect("spawn serve");
    let stdout = child.stdout.take().unwrap();
    let mut addr = String::new();
    for line in std::io::BufReader::new(stdout).lines() {
        let line = line.unwrap();
        if let Some(rest) = line.split("\"listening\": \"").nth(1) {
            addr = rest.split('"').next().unwrap().to_string();
            break;
        }
    }
    assert!(!addr.is_empty(), "no listening line");

    let create = pdm(
        dir.path(),
        &[
            "--json", "profile", "--endpoint", &addr, "--op", "create", "--profile", "p1",
            "--by", "ds.key", "--token", &owner_token, "--payload", r#"{"name":"alice"}"#,
        ],
    );
    assert_eq!(code(&create), 0, "{}", String::from_utf8_lossy(&create.stderr));
    let v = stdout_json(&create);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["body"]["version"], 1);
    assert!(v["audit_ref"].as_str().unwrap().starts_with("tx-"));

    let read = pdm(
        dir.path(),
        &[
            "--json", "profile", "--endpoint", &addr, "--op", "read", "--profile", "p1",
            "--by", "ds.key", "--token", &owner_token,
        ],
    );
    assert_eq!(code(&read), 0);
    assert_eq!(stdout_json(&read)["body"]["attributes"]["name"], "alice");

    // The controller's erasure attempt is denied but audited.
    let controller_token = {
        let registry =
            std::fs::read_to_string(dir.path().join("pdm-data/datasets.json")).unwrap();
        let v: Value = serde_json::from_str(&registry).unwrap();
        v["alice"]["controller_token"].as_str().unwrap().to_string()
    };
    let denied = pdm(
        dir.path(),
        &[
            "--json", "erase", "--endpoint", &addr, "--profile", "p1", "--by", "dc.key",
            "--token", &controller_token,
        ],
    );
    assert_eq!(code(&denied), 3);
    assert_eq!(stdout_json(&denied)["body"]["reason"], "owner_rights");

    let erased = pdm(
        dir.path(),
        &[
            "--json", "erase", "--endpoint", &addr, "--profile", "p1", "--by", "ds.key",
            "--token", &owner_token,
        ],
    );
    assert_eq!(code(&erased), 0);

    let gone = pdm(
        dir.path(),
        &[
            "--json", "profile", "--endpoint", &addr, "--op", "read", "--profile", "p1",
            "--by", "ds.key", "--token", &owner_token,
        ],
    );
    assert_eq!(code(&gone), 4);

    child.kill().unwrap();
    child.wait().unwrap();

    // Every answered request was flushed before its response, so the
    // killed host lost nothing: the store shows both mutations and the
    // chains carry the socket-path validations.
    let store = std::fs::read_to_string(dir.path().join("pdm-data/store.json")).unwrap();
    let store: Value = serde_json::from_str(&store).unwrap();
    assert_eq!(store["mutations"], 2);
    assert_eq!(store["documents"].as_array().unwrap().len(), 0);

    let audit = stdout_json(&pdm(dir.path(), &["--json", "audit"]));
    let validations = audit
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["what"].as_str().unwrap().starts_with("token_validation"))
        .count();
    assert_eq!(validations, 5);
}

#[test]
fn bench_emits_one_csv_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdm(
        dir.path(),
        &[
            "--seed", "7", "bench", "--kind", "read", "--sweep", "loads", "--loads",
            "0.25,0.5", "--duration-ms", "1000", "--clients", "100",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.trim().lines().collect();
    assert_eq!(
        lines[0],
        "axis_value,kind,offered_load,throughput,success_rate,latency_mean,latency_p95"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.25,READ,"));

    // Same seed, same rows.
    let again = pdm(
        dir.path(),
        &[
            "--seed", "7", "bench", "--kind", "read", "--sweep", "loads", "--loads",
            "0.25,0.5", "--duration-ms", "1000", "--clients", "100",
        ],
    );
    assert_eq!(String::from_utf8_lossy(&again.stdout), text);
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // Malformed flags: usage error from the parser.
    let out = pdm(dir.path(), &["grant", "--no-such-flag"]);
    assert_eq!(code(&out), 2);

    // Bad operation name: usage error from validation.
    seed_world(dir.path());
    let out = pdm(
        dir.path(),
        &[
            "grant", "--name", "alice", "--ds", "ds.key", "--dc", "dc.key", "--dp", "dp.key",
            "--op", "explode",
        ],
    );
    assert_eq!(code(&out), 2);

    // Missing fixture key file.
    let out = pdm(
        dir.path(),
        &["validate", "--token", "t", "--by", "nope.key", "--op", "read"],
    );
    assert_eq!(code(&out), 4);

    // Unknown dataset name.
    let out = pdm(
        dir.path(),
        &["upload", "--name", "bob", "--by", "ds.key", "--pointer", "x", "--hash", &"ab".repeat(32)],
    );
    assert_eq!(code(&out), 4);

    // Unreachable resource endpoint.
    let out = pdm(
        dir.path(),
        &[
            "profile", "--endpoint", "127.0.0.1:1", "--op", "read", "--profile", "p",
            "--by", "ds.key", "--token", "t",
        ],
    );
    assert_eq!(code(&out), 6);
}
