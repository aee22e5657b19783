//! Append-only dual-channel ledger.
//!
//! Two independent hash-linked chains share one node: a consent channel
//! holding policy records and a log channel holding token records plus the
//! access trail. Each block commits a batch of transactions and a SHA-256
//! digest over a canonical byte serialization, so any bit of committed
//! history is tamper-evident via [`Channel::verify`].

use crate::crypto::PublicKey;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::collections::HashMap;
use thiserror::Error;

pub const CONSENT_CHANNEL: &str = "3A_channel";
pub const LOG_CHANNEL: &str = "log_channel";

pub const CONSENT_CONTRACT: &str = "3A_cc";
pub const LOG_CONTRACT: &str = "log_cc";

/// Separator between the public keys composing a state key. Keys are fixed
/// 64-char hex, so the composition is injective.
const KEY_SEP: char = '/';

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("unknown channel {0}")]
    UnknownChannel(String),
    #[error("block {height} does not extend the chain tip")]
    BrokenLinkage { height: u64 },
    #[error("malformed export line {line}: {reason}")]
    MalformedExport { line: usize, reason: String },
}

/// 256-bit digest, hex in all serialized forms.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn zero() -> Self {
        Digest([0u8; 32])
    }

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let v = hex::decode(s).ok()?;
        Some(Digest(v.try_into().ok()?))
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("digest must be 64 hex chars"))
    }
}

/// World-state key. Record keys compose ordered public keys; contracts may
/// also keep internal index keys under a short textual prefix, which can
/// never collide with a key composition.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateKey(String);

impl StateKey {
    /// Consent-record key: subject, controller, encryption key.
    pub fn consent(subject: &PublicKey, controller: &PublicKey, encryption: &PublicKey) -> Self {
        Self::compose(&[subject, controller, encryption])
    }

    /// Token-record key: subject, controller, processor, encryption key.
    pub fn token(
        subject: &PublicKey,
        controller: &PublicKey,
        processor: &PublicKey,
        encryption: &PublicKey,
    ) -> Self {
        Self::compose(&[subject, controller, processor, encryption])
    }

    pub fn compose(parts: &[&PublicKey]) -> Self {
        let joined = parts
            .iter()
            .map(|p| p.to_hex())
            .collect::<Vec<_>>()
            .join(&KEY_SEP.to_string());
        StateKey(joined)
    }

    pub fn raw(s: impl Into<String>) -> Self {
        StateKey(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parts(&self) -> Result<Vec<PublicKey>, crate::crypto::CryptoError> {
        self.0.split(KEY_SEP).map(PublicKey::from_hex).collect()
    }
}

impl std::fmt::Debug for StateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "StateKey({})", self.0)
    }
}

impl std::fmt::Display for StateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxStatus {
    Success,
    Rejected,
}

impl TxStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TxStatus::Success => "success",
            TxStatus::Rejected => "rejected",
        }
    }
}

/// One state write: key plus the full replacement value.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Write {
    pub key: StateKey,
    #[serde(with = "hex_bytes")]
    pub value: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &Vec<u8>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

/// Committed contract invocation. Rejected transactions stay on chain for
/// audit but carry no writes.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    pub channel: String,
    pub contract: String,
    pub function: String,
    pub args: Vec<String>,
    pub writes: Vec<Write>,
    pub submitter: PublicKey,
    /// Milliseconds, caller-supplied clock.
    pub submitted_at: u64,
    pub status: TxStatus,
}

impl Transaction {
    /// Canonical bytes: every field length-prefixed (u64 little endian) in
    /// declared order. Two transactions hash alike iff they are
    /// field-for-field identical.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push_field(&mut out, self.tx_id.as_bytes());
        push_field(&mut out, self.channel.as_bytes());
        push_field(&mut out, self.contract.as_bytes());
        push_field(&mut out, self.function.as_bytes());
        push_field(&mut out, &(self.args.len() as u64).to_le_bytes());
        for a in &self.args {
            push_field(&mut out, a.as_bytes());
        }
        push_field(&mut out, &(self.writes.len() as u64).to_le_bytes());
        for w in &self.writes {
            push_field(&mut out, w.key.as_str().as_bytes());
            push_field(&mut out, &w.value);
        }
        push_field(&mut out, self.submitter.as_bytes());
        push_field(&mut out, &self.submitted_at.to_le_bytes());
        push_field(&mut out, self.status.as_str().as_bytes());
        out
    }
}

fn push_field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

/// Sealed block. `block_hash` covers height, previous hash, and every
/// transaction's canonical bytes.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub block_hash: Digest,
    pub txs: Vec<Transaction>,
}

impl Block {
    pub fn seal(height: u64, prev_hash: Digest, txs: Vec<Transaction>) -> Self {
        let mut b = Block {
            height,
            prev_hash,
            block_hash: Digest::zero(),
            txs,
        };
        b.block_hash = b.compute_hash();
        b
    }

    pub fn compute_hash(&self) -> Digest {
        let mut h = Sha256::new();
        h.update(self.height.to_le_bytes());
        h.update(self.prev_hash.0);
        h.update((self.txs.len() as u64).to_le_bytes());
        for tx in &self.txs {
            let canon = tx.canonical_bytes();
            h.update((canon.len() as u64).to_le_bytes());
            h.update(&canon);
        }
        Digest(h.finalize().into())
    }
}

/// Export row: exactly the four block fields, digests as hex.
#[derive(Serialize, Deserialize)]
struct ExportRow {
    height: u64,
    prev_hash: Digest,
    block_hash: Digest,
    txs: Vec<Transaction>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ChainVerdict {
    Ok,
    /// First block whose linkage or recomputed hash fails.
    Corrupt { height: u64 },
}

/// One hash-linked chain plus the world state its successful writes
/// produce. Append-only: blocks can be added, never edited or removed.
#[derive(Clone, Debug)]
pub struct Channel {
    name: String,
    chain: Vec<Block>,
    state: HashMap<StateKey, Vec<u8>>,
}

impl Channel {
    pub fn new(name: impl Into<String>) -> Self {
        Channel {
            name: name.into(),
            chain: Vec::new(),
            state: HashMap::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn height(&self) -> u64 {
        self.chain.len() as u64
    }

    pub fn blocks(&self) -> &[Block] {
        &self.chain
    }

    pub fn tip_hash(&self) -> Digest {
        self.chain
            .last()
            .map(|b| b.block_hash)
            .unwrap_or_else(Digest::zero)
    }

    /// Seals a new block over `txs` and applies the writes of its
    /// successful transactions.
    pub fn append(&mut self, txs: Vec<Transaction>) -> &Block {
        let block = Block::seal(self.height(), self.tip_hash(), txs);
        self.apply_writes(&block);
        self.chain.push(block);
        self.chain.last().unwrap()
    }

    /// Appends a block sealed elsewhere (an ordering node). The block must
    /// extend the current tip exactly; replicas applying the same sealed
    /// blocks in order stay byte-identical.
    pub fn append_sealed(&mut self, block: Block) -> Result<(), LedgerError> {
        if block.height != self.height() || block.prev_hash != self.tip_hash() {
            return Err(LedgerError::BrokenLinkage {
                height: block.height,
            });
        }
        self.apply_writes(&block);
        self.chain.push(block);
        Ok(())
    }

    fn apply_writes(&mut self, block: &Block) {
        for tx in &block.txs {
            if tx.status == TxStatus::Success {
                for w in &tx.writes {
                    self.state.insert(w.key.clone(), w.value.clone());
                }
            }
        }
    }

    pub fn get_state(&self, key: &StateKey) -> Option<&[u8]> {
        self.state.get(key).map(|v| v.as_slice())
    }

    pub fn state_keys(&self) -> impl Iterator<Item = &StateKey> {
        self.state.keys()
    }

    /// Every committed write to `key`, oldest first.
    pub fn history(&self, key: &StateKey) -> Vec<(u64, String, Vec<u8>)> {
        let mut out = Vec::new();
        for block in &self.chain {
            for tx in &block.txs {
                if tx.status != TxStatus::Success {
                    continue;
                }
                for w in &tx.writes {
                    if &w.key == key {
                        out.push((block.height, tx.tx_id.clone(), w.value.clone()));
                    }
                }
            }
        }
        out
    }

    /// Recomputes every block hash and checks linkage from genesis.
    pub fn verify(&self) -> ChainVerdict {
        let mut prev = Digest::zero();
        for (i, block) in self.chain.iter().enumerate() {
            if block.height != i as u64
                || block.prev_hash != prev
                || block.compute_hash() != block.block_hash
            {
                return ChainVerdict::Corrupt { height: i as u64 };
            }
            prev = block.block_hash;
        }
        ChainVerdict::Ok
    }

    /// Rebuilds world state from the chain alone.
    pub fn replay_state(&self) -> HashMap<StateKey, Vec<u8>> {
        let mut state = HashMap::new();
        for block in &self.chain {
            for tx in &block.txs {
                if tx.status == TxStatus::Success {
                    for w in &tx.writes {
                        state.insert(w.key.clone(), w.value.clone());
                    }
                }
            }
        }
        state
    }

    /// True when the cached world state equals a fresh replay.
    pub fn state_matches_replay(&self) -> bool {
        self.replay_state() == self.state
    }

    /// Newline-delimited JSON, one block per line.
    pub fn export_ndjson(&self) -> String {
        let mut out = String::new();
        for block in &self.chain {
            let row = ExportRow {
                height: block.height,
                prev_hash: block.prev_hash,
                block_hash: block.block_hash,
                txs: block.txs.clone(),
            };
            out.push_str(&serde_json::to_string(&row).unwrap());
            out.push('\n');
        }
        out
    }

    /// Inverse of [`export_ndjson`]. Imports blocks as written, corrupt or
    /// not; [`Channel::verify`] is the integrity check, not import.
    pub fn import_ndjson(name: impl Into<String>, data: &str) -> Result<Self, LedgerError> {
        let mut chain = Vec::new();
        for (i, line) in data.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: ExportRow =
                serde_json::from_str(line).map_err(|e| LedgerError::MalformedExport {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            chain.push(Block {
                height: row.height,
                prev_hash: row.prev_hash,
                block_hash: row.block_hash,
                txs: row.txs,
            });
        }
        let mut ch = Channel {
            name: name.into(),
            chain,
            state: HashMap::new(),
        };
        ch.state = ch.replay_state();
        Ok(ch)
    }
}

/// The two-channel ledger node.
#[derive(Clone, Debug)]
pub struct Ledger {
    consent: Channel,
    log: Channel,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger {
            consent: Channel::new(CONSENT_CHANNEL),
            log: Channel::new(LOG_CHANNEL),
        }
    }

    pub fn channel(&self, name: &str) -> Result<&Channel, LedgerError> {
        match name {
            CONSENT_CHANNEL => Ok(&self.consent),
            LOG_CHANNEL => Ok(&self.log),
            other => Err(LedgerError::UnknownChannel(other.to_string())),
        }
    }

    pub fn channel_mut(&mut self, name: &str) -> Result<&mut Channel, LedgerError> {
        match name {
            CONSENT_CHANNEL => Ok(&mut self.consent),
            LOG_CHANNEL => Ok(&mut self.log),
            other => Err(LedgerError::UnknownChannel(other.to_string())),
        }
    }

    pub fn consent(&self) -> &Channel {
        &self.consent
    }

    pub fn log(&self) -> &Channel {
        &self.log
    }

    pub fn channels(&self) -> [&Channel; 2] {
        [&self.consent, &self.log]
    }
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}
