//! Deterministic contract programs over the dual-channel ledger.
//!
//! Every invocation, approving or rejecting, commits as a transaction on
//! the contract's home channel so the audit trail is complete. Execution
//! is a pure function of (ledger state, configuration, invocation):
//! tokens derive from caller nonces, timestamps come from the invocation,
//! and every peer that executes the same invocation against the same state
//! produces the same writes.

pub mod audit;
pub mod consent;
pub mod policy;
pub mod records;
pub mod validation;

use crate::crypto::{PublicKey, Signature};
use crate::ledger::{
    Digest, Ledger, StateKey, TxStatus, CONSENT_CHANNEL, CONSENT_CONTRACT, LOG_CHANNEL,
    LOG_CONTRACT,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Prefix for the world-state index mapping a live token to its record
/// key. Record keys are key compositions, so the prefix cannot collide.
pub const TOKEN_INDEX_PREFIX: &str = "token/";

/// Domain tags keep contract signatures and tokens from being replayable
/// in other roles.
const SIGNING_TAG: &[u8] = b"pdm-authz-v1";
const TOKEN_TAG: &[u8] = b"pdm-token-v1";

/// Deployment parameters shared by every endorsing peer.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ContractConfig {
    /// Initial and refreshed token lifetime, seconds.
    pub token_lifetime_s: i64,
}

impl Default for ContractConfig {
    fn default() -> Self {
        ContractConfig {
            token_lifetime_s: 3600,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum ContractName {
    Consent,
    Log,
}

impl ContractName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContractName::Consent => CONSENT_CONTRACT,
            ContractName::Log => LOG_CONTRACT,
        }
    }

    pub fn home_channel(&self) -> &'static str {
        match self {
            ContractName::Consent => CONSENT_CHANNEL,
            ContractName::Log => LOG_CHANNEL,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            CONSENT_CONTRACT => Some(ContractName::Consent),
            LOG_CONTRACT => Some(ContractName::Log),
            _ => None,
        }
    }
}

/// A contract call as submitted by a client.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Invocation {
    pub contract: ContractName,
    pub function: String,
    pub args: Vec<String>,
    pub submitter: PublicKey,
    /// Client clock, milliseconds. This is `now` for all contract logic.
    pub submitted_at: u64,
}

impl Invocation {
    /// Canonical bytes the submitting client signs when the call travels
    /// over the network.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push(&mut out, self.contract.as_str().as_bytes());
        push(&mut out, self.function.as_bytes());
        push(&mut out, &(self.args.len() as u64).to_le_bytes());
        for a in &self.args {
            push(&mut out, a.as_bytes());
        }
        push(&mut out, self.submitter.as_bytes());
        push(&mut out, &self.submitted_at.to_le_bytes());
        out
    }
}

fn push(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

/// Message a party signs to authorize one contract action. Both the
/// client side and the contract derive it the same way; the nonce binds
/// the signature to a single invocation.
pub fn signing_payload(function: &str, fields: &[&str], nonce: &str) -> Vec<u8> {
    let mut out = Vec::new();
    push(&mut out, SIGNING_TAG);
    push(&mut out, function.as_bytes());
    push(&mut out, &(fields.len() as u64).to_le_bytes());
    for f in fields {
        push(&mut out, f.as_bytes());
    }
    push(&mut out, nonce.as_bytes());
    out
}

/// Access tokens are unguessable yet deterministic given the invocation:
/// a digest over the caller nonce, the record key, and the clock.
pub fn derive_token(nonce: &str, key: &StateKey, now_ms: u64) -> String {
    let mut h = Sha256::new();
    h.update(TOKEN_TAG);
    h.update((nonce.len() as u64).to_le_bytes());
    h.update(nonce.as_bytes());
    h.update((key.as_str().len() as u64).to_le_bytes());
    h.update(key.as_str().as_bytes());
    h.update(now_ms.to_le_bytes());
    hex::encode(h.finalize())
}

pub fn token_index_key(token: &str) -> StateKey {
    StateKey::raw(format!("{TOKEN_INDEX_PREFIX}{token}"))
}

/// One state write targeted at a channel. Writes to the contract's home
/// channel ride in the main transaction; the rest become companion
/// transactions at commit.
#[derive(Clone, PartialEq, Debug)]
pub struct ChannelWrite {
    pub channel: &'static str,
    pub key: StateKey,
    pub value: Vec<u8>,
}

/// Outcome of executing one invocation against a ledger snapshot.
#[derive(Clone, Debug)]
pub struct Execution {
    pub status: TxStatus,
    /// Rejection reason, when rejected.
    pub reason: Option<String>,
    /// In-band response returned to the caller; never written on chain.
    pub response: serde_json::Value,
    pub writes: Vec<ChannelWrite>,
}

impl Execution {
    pub fn accept(response: serde_json::Value, writes: Vec<ChannelWrite>) -> Self {
        Execution {
            status: TxStatus::Success,
            reason: None,
            response,
            writes,
        }
    }

    /// Rejected invocations carry no writes; they commit for the audit
    /// trail only.
    pub fn reject(reason: impl Into<String>) -> Self {
        let reason = reason.into();
        Execution {
            status: TxStatus::Rejected,
            response: serde_json::json!({ "error": reason }),
            reason: Some(reason),
            writes: Vec::new(),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == TxStatus::Success
    }

    /// Endorsement digest. Peers agree on an invocation's effect iff their
    /// executions digest alike.
    pub fn digest(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(self.status.as_str().as_bytes());
        h.update([0u8]);
        if let Some(r) = &self.reason {
            h.update(r.as_bytes());
        }
        h.update([0u8]);
        // serde_json maps are ordered, so this rendering is canonical.
        h.update(self.response.to_string().as_bytes());
        for w in &self.writes {
            h.update([0u8]);
            h.update(w.channel.as_bytes());
            h.update([0u8]);
            h.update(w.key.as_str().as_bytes());
            h.update((w.value.len() as u64).to_le_bytes());
            h.update(&w.value);
        }
        Digest(h.finalize().into())
    }
}

/// Rejection reasons shared across contract functions.
pub mod reason {
    pub const SIGNATURE: &str = "signature";
    pub const BAD_ARGS: &str = "bad_args";
    pub const UNKNOWN_FUNCTION: &str = "unknown_function";
    pub const ALREADY_REGISTERED: &str = "already_registered";
    pub const UNKNOWN_RECORD: &str = "unknown_record";
    pub const POLICY: &str = "policy";
    pub const OWNER_RIGHTS: &str = "owner_rights";
    pub const TOKEN_MISSING: &str = "token_missing";
    pub const UNKNOWN_TOKEN: &str = "unknown_token";
    pub const NOT_HOLDER: &str = "not_holder";
    pub const NOT_APPROVED: &str = "not_approved";
    pub const SCOPE_MISS: &str = "scope_miss";
    pub const EXPIRED: &str = "expired";
}

/// Argument accessor with uniform rejection reasons.
pub(crate) struct Args<'a>(pub &'a [String]);

impl<'a> Args<'a> {
    pub fn expect_len(&self, n: usize) -> Result<(), String> {
        if self.0.len() == n {
            Ok(())
        } else {
            Err(reason::BAD_ARGS.to_string())
        }
    }

    pub fn str(&self, i: usize) -> Result<&'a str, String> {
        self.0
            .get(i)
            .map(|s| s.as_str())
            .ok_or_else(|| reason::BAD_ARGS.to_string())
    }

    pub fn pk(&self, i: usize) -> Result<PublicKey, String> {
        PublicKey::from_hex(self.str(i)?).map_err(|_| reason::BAD_ARGS.to_string())
    }

    pub fn sig(&self, i: usize, signer: PublicKey) -> Result<Signature, String> {
        Signature::from_hex(self.str(i)?, signer).map_err(|_| reason::BAD_ARGS.to_string())
    }

    pub fn op(&self, i: usize) -> Result<policy::Operation, String> {
        policy::Operation::parse(self.str(i)?).ok_or_else(|| reason::BAD_ARGS.to_string())
    }
}

pub fn read_consent(ledger: &Ledger, key: &StateKey) -> Option<records::ConsentRecord> {
    records::ConsentRecord::from_bytes(ledger.consent().get_state(key)?)
}

pub fn read_token(ledger: &Ledger, key: &StateKey) -> Option<records::TokenRecord> {
    records::TokenRecord::from_bytes(ledger.log().get_state(key)?)
}

/// Executes one invocation against a ledger snapshot. Never mutates the
/// ledger; committing the resulting writes is the caller's job.
pub fn execute(ledger: &Ledger, cfg: &ContractConfig, inv: &Invocation) -> Execution {
    let run = match (inv.contract, inv.function.as_str()) {
        (ContractName::Consent, "registration") => consent::registration(ledger, cfg, inv),
        (ContractName::Consent, "data_upload") => consent::data_upload(ledger, inv),
        (ContractName::Consent, "grant_consent") => consent::grant_consent(ledger, cfg, inv),
        (ContractName::Consent, "revoke_consent") => consent::revoke_consent(ledger, inv),
        (ContractName::Consent, "data_access") => consent::data_access(ledger, inv),
        (ContractName::Consent, "policy_check") => consent::policy_check(ledger, inv),
        (ContractName::Log, "token_validation") => validation::token_validation(ledger, inv),
        (ContractName::Log, "token_refresh") => validation::token_refresh(ledger, cfg, inv),
        _ => Err(reason::UNKNOWN_FUNCTION.to_string()),
    };
    match run {
        Ok(exec) => exec,
        Err(reason) => Execution::reject(reason),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signing_payload_separates_fields() {
        let a = signing_payload("grant", &["ab", "c"], "n");
        let b = signing_payload("grant", &["a", "bc"], "n");
        assert_ne!(a, b);
        let c = signing_payload("grant", &["ab", "c"], "m");
        assert_ne!(a, c);
        let d = signing_payload("revoke", &["ab", "c"], "n");
        assert_ne!(a, d);
    }

    #[test]
    fn derived_tokens_are_64_hex_and_input_sensitive() {
        let k1 = StateKey::raw("a/b/c");
        let k2 = StateKey::raw("a/b/d");
        let t = derive_token("nonce", &k1, 5);
        assert_eq!(t.len(), 64);
        assert!(t.chars().all(|c| c.is_ascii_hexdigit()));
        assert_ne!(t, derive_token("nonce", &k2, 5));
        assert_ne!(t, derive_token("nonce", &k1, 6));
        assert_ne!(t, derive_token("ecnon", &k1, 5));
    }

    #[test]
    fn execution_digest_tracks_every_component() {
        let base = Execution::accept(
            serde_json::json!({"x": 1}),
            vec![ChannelWrite {
                channel: CONSENT_CHANNEL,
                key: StateKey::raw("k"),
                value: vec![1, 2],
            }],
        );
        let mut other = base.clone();
        other.writes[0].value = vec![1, 3];
        assert_ne!(base.digest(), other.digest());

        let mut other = base.clone();
        other.response = serde_json::json!({"x": 2});
        assert_ne!(base.digest(), other.digest());

        assert_ne!(base.digest(), Execution::reject("policy").digest());
        assert_ne!(
            Execution::reject("policy").digest(),
            Execution::reject("signature").digest()
        );
    }

    #[test]
    fn unknown_function_rejects() {
        let ledger = Ledger::new();
        let kp = crate::crypto::KeyPair::from_seed([7u8; 32]);
        let inv = Invocation {
            contract: ContractName::Consent,
            function: "mint".into(),
            args: vec![],
            submitter: kp.public,
            submitted_at: 0,
        };
        let exec = execute(&ledger, &ContractConfig::default(), &inv);
        assert_eq!(exec.status, TxStatus::Rejected);
        assert_eq!(exec.reason.as_deref(), Some(reason::UNKNOWN_FUNCTION));
        assert!(exec.writes.is_empty());
    }
}
