//! Single-node platform: executes invocations and commits them to the
//! dual-channel ledger under a caller-controlled clock.
//!
//! Commit rule: every invocation becomes one transaction on its
//! contract's home channel, holding the home-channel writes. Writes
//! targeting the other channel commit in the same step as a companion
//! transaction whose id carries a `/` suffix, so cross-channel effects
//! are atomic from the caller's point of view and origin transactions
//! remain countable.

use crate::contracts::audit::{audit_query, AuditEntry, AuditFilter};
use crate::contracts::policy::Operation;
use crate::contracts::records::{ConsentRecord, TokenRecord};
use crate::contracts::validation::{resolve_token, Verdict};
use crate::contracts::{
    execute, read_consent, read_token, signing_payload, ContractConfig, ContractName, Execution,
    Invocation,
};
use crate::crypto::{CipherText, KeyPair, PublicKey};
use crate::ledger::{
    ChainVerdict, Digest, Ledger, StateKey, Transaction, TxStatus, Write, CONSENT_CHANNEL,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde_json::json;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("invocation rejected: {reason}")]
    Rejected { reason: String, tx_id: String },
    #[error("crypto failure: {0}")]
    Crypto(#[from] crate::crypto::CryptoError),
    #[error("missing record for {0}")]
    MissingRecord(String),
    #[error("malformed contract response: {0}")]
    BadResponse(String),
}

/// The three public keys naming one managed dataset.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct DatasetId {
    pub subject: PublicKey,
    pub controller: PublicKey,
    pub encryption: PublicKey,
}

impl DatasetId {
    pub fn consent_key(&self) -> StateKey {
        StateKey::consent(&self.subject, &self.controller, &self.encryption)
    }

    pub fn token_key(&self, processor: &PublicKey) -> StateKey {
        StateKey::token(&self.subject, &self.controller, processor, &self.encryption)
    }
}

/// Result of committing one invocation.
#[derive(Clone, Debug)]
pub struct Committed {
    pub tx_id: String,
    pub status: TxStatus,
    pub reason: Option<String>,
    pub response: serde_json::Value,
}

impl Committed {
    fn into_result(self) -> Result<Committed, PlatformError> {
        match self.status {
            TxStatus::Success => Ok(self),
            TxStatus::Rejected => Err(PlatformError::Rejected {
                reason: self.reason.unwrap_or_else(|| "rejected".into()),
                tx_id: self.tx_id,
            }),
        }
    }

    fn response_str(&self, field: &str) -> Result<String, PlatformError> {
        self.response[field]
            .as_str()
            .map(String::from)
            .ok_or_else(|| PlatformError::BadResponse(field.into()))
    }
}

#[derive(Debug)]
pub struct Registration {
    pub dataset: DatasetId,
    pub owner_token: String,
    pub controller_token: String,
    pub tx_id: String,
}

#[derive(Debug)]
pub struct AccessGrant {
    pub en_pointer: CipherText,
    pub access_token: String,
    pub tx_id: String,
}

pub struct Platform {
    ledger: Ledger,
    config: ContractConfig,
    clock_ms: u64,
    seq: u64,
    rng: ChaCha12Rng,
}

impl Platform {
    pub fn new() -> Self {
        Self::with_seed(rand::rngs::OsRng.next_u64())
    }

    /// Deterministic platform: nonces, and therefore tokens, replay
    /// exactly for a given seed and clock schedule.
    pub fn with_seed(seed: u64) -> Self {
        Platform {
            ledger: Ledger::new(),
            config: ContractConfig::default(),
            clock_ms: 0,
            seq: 0,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn with_config(mut self, config: ContractConfig) -> Self {
        self.config = config;
        self
    }

    pub fn config(&self) -> &ContractConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Replaces the ledger wholesale, e.g. after importing chain exports.
    /// Sequence and clock continue where the chains left off, so a
    /// restored platform never mints a duplicate transaction id and never
    /// timestamps before history.
    pub fn restore_ledger(&mut self, ledger: Ledger) {
        let channels = ledger.channels();
        let txs = channels
            .iter()
            .flat_map(|c| c.blocks().iter().flat_map(|b| b.txs.iter()));
        let mut seq = 0u64;
        let mut clock = self.clock_ms;
        for tx in txs {
            // Companion cross-channel transactions share their home
            // transaction's sequence number under a suffixed id.
            if !tx.tx_id.contains('/') {
                seq += 1;
            }
            clock = clock.max(tx.submitted_at);
        }
        self.seq = seq;
        self.clock_ms = clock;
        self.ledger = ledger;
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    pub fn advance_clock(&mut self, ms: u64) {
        self.clock_ms += ms;
    }

    /// Clock never moves backwards; audit ordering depends on it.
    pub fn set_clock(&mut self, ms: u64) {
        self.clock_ms = self.clock_ms.max(ms);
    }

    pub fn next_nonce(&mut self) -> String {
        let mut bytes = [0u8; 16];
        self.rng.fill_bytes(&mut bytes);
        hex::encode(bytes)
    }

    pub fn generate_keypair(&mut self) -> KeyPair {
        KeyPair::generate_from_rng(&mut self.rng)
    }

    /// Executes and commits one invocation: home-channel transaction
    /// always, companion transaction when writes span both channels.
    pub fn submit(
        &mut self,
        contract: ContractName,
        function: &str,
        args: Vec<String>,
        submitter: PublicKey,
    ) -> Committed {
        let inv = Invocation {
            contract,
            function: function.to_string(),
            args,
            submitter,
            submitted_at: self.clock_ms,
        };
        let exec = execute(&self.ledger, &self.config, &inv);
        self.commit(&inv, &exec)
    }

    fn commit(&mut self, inv: &Invocation, exec: &Execution) -> Committed {
        self.seq += 1;
        let short = hex::encode(&Digest::of(&inv.canonical_bytes()).0[..4]);
        let tx_id = format!("tx-{:06}-{}", self.seq, short);

        let home = inv.contract.home_channel();
        let mut home_writes = Vec::new();
        let mut other_writes: Vec<(&'static str, Write)> = Vec::new();
        for w in &exec.writes {
            let write = Write {
                key: w.key.clone(),
                value: w.value.clone(),
            };
            if w.channel == home {
                home_writes.push(write);
            } else {
                other_writes.push((w.channel, write));
            }
        }

        let make_tx = |id: String, channel: &str, writes: Vec<Write>| Transaction {
            tx_id: id,
            channel: channel.to_string(),
            contract: inv.contract.as_str().to_string(),
            function: inv.function.clone(),
            args: inv.args.clone(),
            writes,
            submitter: inv.submitter,
            submitted_at: inv.submitted_at,
            status: exec.status,
        };

        let home_tx = make_tx(tx_id.clone(), home, home_writes);
        self.ledger.channel_mut(home).unwrap().append(vec![home_tx]);

        if !other_writes.is_empty() {
            let channel = other_writes[0].0;
            let suffix = match channel {
                CONSENT_CHANNEL => "3A",
                _ => "log",
            };
            let companion_id = format!("{tx_id}/{suffix}");
            let writes = other_writes.into_iter().map(|(_, w)| w).collect();
            let companion = make_tx(companion_id, channel, writes);
            self.ledger
                .channel_mut(channel)
                .unwrap()
                .append(vec![companion]);
        }

        Committed {
            tx_id,
            status: exec.status,
            reason: exec.reason.clone(),
            response: exec.response.clone(),
        }
    }

    // ----- actor flows ------------------------------------------------

    /// Registers a dataset. A fresh encryption keypair is generated here
    /// and returned to the caller; hand its private half to the subject.
    pub fn register(
        &mut self,
        subject: &KeyPair,
        controller: &KeyPair,
        controller_ops: &BTreeSet<Operation>,
    ) -> Result<(Registration, KeyPair), PlatformError> {
        let enc = self.generate_keypair();
        let reg = self.register_with_encryption(subject, controller, controller_ops, enc.public)?;
        Ok((reg, enc))
    }

    pub fn register_with_encryption(
        &mut self,
        subject: &KeyPair,
        controller: &KeyPair,
        controller_ops: &BTreeSet<Operation>,
        encryption: PublicKey,
    ) -> Result<Registration, PlatformError> {
        let nonce = self.next_nonce();
        let ops = Operation::join_list(controller_ops);
        let payload = signing_payload(
            "registration",
            &[
                &subject.public.to_hex(),
                &controller.public.to_hex(),
                &encryption.to_hex(),
                &ops,
            ],
            &nonce,
        );
        let committed = self
            .submit(
                ContractName::Consent,
                "registration",
                vec![
                    subject.public.to_hex(),
                    subject.sign(&payload).to_hex(),
                    controller.public.to_hex(),
                    controller.sign(&payload).to_hex(),
                    encryption.to_hex(),
                    ops,
                    nonce,
                ],
                subject.public,
            )
            .into_result()?;
        Ok(Registration {
            dataset: DatasetId {
                subject: subject.public,
                controller: controller.public,
                encryption,
            },
            owner_token: committed.response_str("owner_token")?,
            controller_token: committed.response_str("controller_token")?,
            tx_id: committed.tx_id,
        })
    }

    /// Uploads the off-chain pointer: encrypts it under the dataset key
    /// client-side, then records ciphertext and content digest on chain.
    pub fn upload(
        &mut self,
        dataset: &DatasetId,
        uploader: &KeyPair,
        pointer: &[u8],
        content_hash: Digest,
    ) -> Result<Committed, PlatformError> {
        let en_pointer = dataset.encryption.encrypt(pointer)?;
        self.upload_encrypted(dataset, uploader, &en_pointer, content_hash)
    }

    pub fn upload_encrypted(
        &mut self,
        dataset: &DatasetId,
        uploader: &KeyPair,
        en_pointer: &CipherText,
        content_hash: Digest,
    ) -> Result<Committed, PlatformError> {
        let nonce = self.next_nonce();
        let pointer_hex = en_pointer.to_hex();
        let hash_hex = content_hash.to_hex();
        let payload = signing_payload(
            "data_upload",
            &[
                &dataset.subject.to_hex(),
                &dataset.controller.to_hex(),
                &dataset.encryption.to_hex(),
                &uploader.public.to_hex(),
                &pointer_hex,
                &hash_hex,
            ],
            &nonce,
        );
        self.submit(
            ContractName::Consent,
            "data_upload",
            vec![
                dataset.subject.to_hex(),
                dataset.controller.to_hex(),
                dataset.encryption.to_hex(),
                uploader.public.to_hex(),
                uploader.sign(&payload).to_hex(),
                pointer_hex,
                hash_hex,
                nonce,
            ],
            uploader.public,
        )
        .into_result()
    }

    /// Three-party grant. Returns the processor's fresh access token.
    pub fn grant(
        &mut self,
        dataset: &DatasetId,
        subject: &KeyPair,
        controller: &KeyPair,
        processor: &KeyPair,
        op: Operation,
    ) -> Result<String, PlatformError> {
        let nonce = self.next_nonce();
        let payload = signing_payload(
            "grant_consent",
            &[
                &dataset.subject.to_hex(),
                &dataset.controller.to_hex(),
                &dataset.encryption.to_hex(),
                &processor.public.to_hex(),
                op.as_str(),
            ],
            &nonce,
        );
        let committed = self
            .submit(
                ContractName::Consent,
                "grant_consent",
                vec![
                    dataset.subject.to_hex(),
                    dataset.controller.to_hex(),
                    dataset.encryption.to_hex(),
                    processor.public.to_hex(),
                    op.as_str().to_string(),
                    subject.sign(&payload).to_hex(),
                    controller.sign(&payload).to_hex(),
                    processor.sign(&payload).to_hex(),
                    nonce,
                ],
                subject.public,
            )
            .into_result()?;
        committed.response_str("access_token")
    }

    /// Revocation by subject or controller. Returns the regenerated token
    /// if a token record existed.
    pub fn revoke(
        &mut self,
        dataset: &DatasetId,
        signer: &KeyPair,
        processor: PublicKey,
        op: Operation,
    ) -> Result<Option<String>, PlatformError> {
        let nonce = self.next_nonce();
        let payload = signing_payload(
            "revoke_consent",
            &[
                &dataset.subject.to_hex(),
                &dataset.controller.to_hex(),
                &dataset.encryption.to_hex(),
                &processor.to_hex(),
                op.as_str(),
            ],
            &nonce,
        );
        let committed = self
            .submit(
                ContractName::Consent,
                "revoke_consent",
                vec![
                    dataset.subject.to_hex(),
                    dataset.controller.to_hex(),
                    dataset.encryption.to_hex(),
                    processor.to_hex(),
                    op.as_str().to_string(),
                    signer.public.to_hex(),
                    signer.sign(&payload).to_hex(),
                    nonce,
                ],
                signer.public,
            )
            .into_result()?;
        Ok(committed.response["access_token"].as_str().map(String::from))
    }

    /// Authorized read of the encrypted pointer plus the current token.
    pub fn access(
        &mut self,
        dataset: &DatasetId,
        requester: &KeyPair,
        op: Operation,
    ) -> Result<AccessGrant, PlatformError> {
        let nonce = self.next_nonce();
        let payload = signing_payload(
            "data_access",
            &[
                &dataset.subject.to_hex(),
                &dataset.controller.to_hex(),
                &dataset.encryption.to_hex(),
                &requester.public.to_hex(),
                op.as_str(),
            ],
            &nonce,
        );
        let committed = self
            .submit(
                ContractName::Consent,
                "data_access",
                vec![
                    dataset.subject.to_hex(),
                    dataset.controller.to_hex(),
                    dataset.encryption.to_hex(),
                    requester.public.to_hex(),
                    op.as_str().to_string(),
                    requester.sign(&payload).to_hex(),
                    nonce,
                ],
                requester.public,
            )
            .into_result()?;
        let pointer_hex = committed.response_str("en_pointer")?;
        Ok(AccessGrant {
            en_pointer: CipherText::from_hex(&pointer_hex, dataset.encryption)?,
            access_token: committed.response_str("access_token")?,
            tx_id: committed.tx_id,
        })
    }

    /// Policy query; commits like any invocation.
    pub fn policy_check(
        &mut self,
        dataset: &DatasetId,
        pk: PublicKey,
        op: Operation,
    ) -> Result<bool, PlatformError> {
        let committed = self
            .submit(
                ContractName::Consent,
                "policy_check",
                vec![
                    dataset.subject.to_hex(),
                    dataset.controller.to_hex(),
                    dataset.encryption.to_hex(),
                    pk.to_hex(),
                    op.as_str().to_string(),
                ],
                pk,
            )
            .into_result()?;
        committed.response["allowed"]
            .as_bool()
            .ok_or_else(|| PlatformError::BadResponse("allowed".into()))
    }

    /// Token validation as the resource server performs it. Returns the
    /// verdict; rejection is an outcome here, not an error.
    pub fn validate(&mut self, token: &str, holder: &KeyPair, op: Operation) -> (Verdict, Committed) {
        let nonce = self.next_nonce();
        let payload = signing_payload(
            "token_validation",
            &[token, &holder.public.to_hex(), op.as_str()],
            &nonce,
        );
        let committed = self.submit(
            ContractName::Log,
            "token_validation",
            vec![
                token.to_string(),
                holder.public.to_hex(),
                op.as_str().to_string(),
                holder.sign(&payload).to_hex(),
                nonce,
            ],
            holder.public,
        );
        let verdict = match committed.status {
            TxStatus::Success => Verdict::from_response(&committed.response),
            TxStatus::Rejected => Verdict {
                accepted: false,
                reason: committed.reason.clone(),
                remaining_s: None,
                holder: None,
            },
        };
        (verdict, committed)
    }

    /// Refreshes the token for (dataset, processor) back to full lifetime.
    pub fn refresh(
        &mut self,
        dataset: &DatasetId,
        processor: PublicKey,
        holder: &KeyPair,
    ) -> Result<String, PlatformError> {
        let nonce = self.next_nonce();
        let payload = signing_payload(
            "token_refresh",
            &[
                &dataset.subject.to_hex(),
                &dataset.controller.to_hex(),
                &processor.to_hex(),
                &dataset.encryption.to_hex(),
                &holder.public.to_hex(),
            ],
            &nonce,
        );
        let committed = self
            .submit(
                ContractName::Log,
                "token_refresh",
                vec![
                    dataset.subject.to_hex(),
                    dataset.controller.to_hex(),
                    processor.to_hex(),
                    dataset.encryption.to_hex(),
                    holder.public.to_hex(),
                    holder.sign(&payload).to_hex(),
                    nonce,
                ],
                holder.public,
            )
            .into_result()?;
        committed.response_str("access_token")
    }

    // ----- reads ------------------------------------------------------

    pub fn consent_record(&self, dataset: &DatasetId) -> Option<ConsentRecord> {
        read_consent(&self.ledger, &dataset.consent_key())
    }

    pub fn token_record(&self, dataset: &DatasetId, processor: &PublicKey) -> Option<TokenRecord> {
        read_token(&self.ledger, &dataset.token_key(processor))
    }

    /// Live-token lookup: index plus staleness check.
    pub fn token_record_by_token(&self, token: &str) -> Option<(StateKey, TokenRecord)> {
        let key = resolve_token(&self.ledger, token)?;
        let rec = read_token(&self.ledger, &key)?;
        Some((key, rec))
    }

    pub fn audit(&self, filter: &AuditFilter) -> Vec<AuditEntry> {
        audit_query(&self.ledger, filter)
    }

    pub fn verify_chains(&self) -> Vec<(String, ChainVerdict)> {
        self.ledger
            .channels()
            .into_iter()
            .map(|c| (c.name().to_string(), c.verify()))
            .collect()
    }

    /// Health summary: chain verdicts plus state/replay agreement.
    pub fn health(&self) -> serde_json::Value {
        let chains: Vec<_> = self
            .ledger
            .channels()
            .into_iter()
            .map(|c| {
                json!({
                    "channel": c.name(),
                    "height": c.height(),
                    "verdict": match c.verify() {
                        ChainVerdict::Ok => json!("ok"),
                        ChainVerdict::Corrupt { height } => json!({"corrupt_at": height}),
                    },
                    "state_matches_replay": c.state_matches_replay(),
                })
            })
            .collect();
        json!({ "chains": chains })
    }
}

impl Default for Platform {
    fn default() -> Self {
        Self::new()
    }
}
