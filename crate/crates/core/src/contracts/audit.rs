//! Audit trail derived from the chains themselves.
//!
//! Every contract invocation commits, approved or rejected, so scanning
//! the two chains reconstructs the full history: who did what, when, to
//! which dataset, with what verdict. No side bookkeeping exists to drift
//! out of step with the ledger.

use crate::contracts::TOKEN_INDEX_PREFIX;
use crate::crypto::PublicKey;
use crate::ledger::{Ledger, StateKey, Transaction, TxStatus};
use serde::Serialize;
use std::collections::HashMap;

/// One audit fact. `which` is the consent-record key of the dataset
/// touched, empty when the invocation never resolved to one (a rejected
/// validation of an unknown token, say).
#[derive(Clone, Debug, PartialEq)]
pub struct AuditEntry {
    pub who: PublicKey,
    pub what: String,
    pub when: u64,
    pub which: String,
    pub verdict: TxStatus,
    /// Processor-position party, for filtering. Not exported.
    pub processor: Option<PublicKey>,
}

/// All filters are conjunctive; `None` matches everything.
#[derive(Clone, Debug, Default)]
pub struct AuditFilter {
    pub owner: Option<PublicKey>,
    pub controller: Option<PublicKey>,
    pub processor: Option<PublicKey>,
    pub from_ms: Option<u64>,
    pub to_ms: Option<u64>,
}

impl AuditFilter {
    pub fn matches(&self, entry: &AuditEntry) -> bool {
        let parts: Vec<&str> = if entry.which.is_empty() {
            Vec::new()
        } else {
            entry.which.split('/').collect()
        };
        if let Some(owner) = &self.owner {
            if parts.first().copied() != Some(owner.to_hex().as_str()) {
                return false;
            }
        }
        if let Some(controller) = &self.controller {
            if parts.get(1).copied() != Some(controller.to_hex().as_str()) {
                return false;
            }
        }
        if let Some(processor) = &self.processor {
            if entry.processor.as_ref() != Some(processor) {
                return false;
            }
        }
        if let Some(from) = self.from_ms {
            if entry.when < from {
                return false;
            }
        }
        if let Some(to) = self.to_ms {
            if entry.when > to {
                return false;
            }
        }
        true
    }
}

/// Origin transactions only: companion transactions replicating writes to
/// the other channel carry a `/` suffix in their id.
fn is_origin(tx: &Transaction) -> bool {
    !tx.tx_id.contains('/')
}

/// Scans both chains and returns matching entries ordered by timestamp,
/// then channel, then chain position. With a monotone submission clock the
/// result grows append-only as more transactions commit.
pub fn audit_query(ledger: &Ledger, filter: &AuditFilter) -> Vec<AuditEntry> {
    let mut entries: Vec<(u64, usize, u64, usize, AuditEntry)> = Vec::new();

    for (channel_rank, channel) in ledger.channels().into_iter().enumerate() {
        // Incrementally replayed token index: resolves each validation's
        // token as of its own point in the chain, not today's state.
        let mut token_to_key: HashMap<String, String> = HashMap::new();
        for block in channel.blocks() {
            for (idx, tx) in block.txs.iter().enumerate() {
                if is_origin(tx) {
                    if let Some(entry) = entry_for(tx, &token_to_key) {
                        entries.push((entry.when, channel_rank, block.height, idx, entry));
                    }
                }
                if tx.status == TxStatus::Success {
                    for w in &tx.writes {
                        if let Some(token) = w.key.as_str().strip_prefix(TOKEN_INDEX_PREFIX) {
                            if let Ok(key) = String::from_utf8(w.value.clone()) {
                                token_to_key.insert(token.to_string(), key);
                            }
                        }
                    }
                }
            }
        }
    }

    entries.sort_by(|a, b| (a.0, a.1, a.2, a.3).cmp(&(b.0, b.1, b.2, b.3)));
    entries
        .into_iter()
        .map(|(_, _, _, _, e)| e)
        .filter(|e| filter.matches(e))
        .collect()
}

/// Consent-record key from a token-record key (drop the processor part).
fn consent_key_of_token_key(key: &str) -> String {
    let parts: Vec<&str> = key.split('/').collect();
    if parts.len() == 4 {
        format!("{}/{}/{}", parts[0], parts[1], parts[3])
    } else {
        String::new()
    }
}

fn entry_for(tx: &Transaction, token_to_key: &HashMap<String, String>) -> Option<AuditEntry> {
    let arg = |i: usize| tx.args.get(i).cloned().unwrap_or_default();
    let pk_arg = |i: usize| tx.args.get(i).and_then(|s| PublicKey::from_hex(s).ok());
    let consent_key = |s_idx: usize, c_idx: usize, e_idx: usize| -> String {
        match (pk_arg(s_idx), pk_arg(c_idx), pk_arg(e_idx)) {
            (Some(s), Some(c), Some(e)) => StateKey::consent(&s, &c, &e).as_str().to_string(),
            _ => String::new(),
        }
    };

    let (what, which, processor) = match tx.function.as_str() {
        "registration" => ("registration".to_string(), consent_key(0, 2, 4), None),
        "data_upload" => ("data_upload".to_string(), consent_key(0, 1, 2), None),
        "grant_consent" => (
            format!("grant_consent:{}", arg(4)),
            consent_key(0, 1, 2),
            pk_arg(3),
        ),
        "revoke_consent" => (
            format!("revoke_consent:{}", arg(4)),
            consent_key(0, 1, 2),
            pk_arg(3),
        ),
        "data_access" => (
            format!("data_access:{}", arg(4)),
            consent_key(0, 1, 2),
            pk_arg(3),
        ),
        "policy_check" => (
            format!("policy_check:{}", arg(4)),
            consent_key(0, 1, 2),
            pk_arg(3),
        ),
        "token_validation" => {
            let which = token_to_key
                .get(&arg(0))
                .map(|k| consent_key_of_token_key(k))
                .unwrap_or_default();
            (format!("token_validation:{}", arg(2)), which, pk_arg(1))
        }
        "token_refresh" => {
            let which = match (pk_arg(0), pk_arg(1), pk_arg(3)) {
                (Some(s), Some(c), Some(e)) => StateKey::consent(&s, &c, &e).as_str().to_string(),
                _ => String::new(),
            };
            ("token_refresh".to_string(), which, pk_arg(4))
        }
        _ => return None,
    };

    Some(AuditEntry {
        who: tx.submitter,
        what,
        when: tx.submitted_at,
        which,
        verdict: tx.status,
        processor,
    })
}

#[derive(Serialize)]
struct ExportRow<'a> {
    who: String,
    what: &'a str,
    when: u64,
    which: &'a str,
    verdict: &'a str,
}

/// Newline-delimited JSON with exactly the five audit fields.
pub fn export_ndjson(entries: &[AuditEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let row = ExportRow {
            who: e.who.to_hex(),
            what: &e.what,
            when: e.when,
            which: &e.which,
            verdict: e.verdict.as_str(),
        };
        out.push_str(&serde_json::to_string(&row).unwrap());
        out.push('\n');
    }
    out
}
