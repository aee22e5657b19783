//! Consent-channel contract: dataset registration, uploads, consent
//! grant/revocation, gated access, and policy queries.
//!
//! Authorization model: the data subject outranks everyone on their own
//! dataset. Granting consent to a processor takes all three signatures
//! (subject, controller, processor); revoking takes any one of subject or
//! controller; nothing can strip the subject's own rights.

use crate::contracts::policy::{AccessPolicy, Operation};
use crate::contracts::records::{ConsentRecord, ConsentStatus, TokenRecord};
use crate::contracts::{
    derive_token, read_consent, read_token, reason, signing_payload, token_index_key, Args,
    ChannelWrite, ContractConfig, Execution, Invocation,
};
use crate::ledger::{Digest, Ledger, StateKey, CONSENT_CHANNEL, LOG_CHANNEL};
use serde_json::json;
use std::collections::BTreeSet;

fn consent_write(key: &StateKey, rec: &ConsentRecord) -> ChannelWrite {
    ChannelWrite {
        channel: CONSENT_CHANNEL,
        key: key.clone(),
        value: rec.to_bytes(),
    }
}

/// Record write plus the token index entry pointing back at it. Stale
/// index entries from older tokens are left behind deliberately; lookups
/// compare the record's live token.
fn token_writes(key: &StateKey, rec: &TokenRecord) -> Vec<ChannelWrite> {
    vec![
        ChannelWrite {
            channel: LOG_CHANNEL,
            key: key.clone(),
            value: rec.to_bytes(),
        },
        ChannelWrite {
            channel: LOG_CHANNEL,
            key: token_index_key(&rec.access_token),
            value: key.as_str().as_bytes().to_vec(),
        },
    ]
}

fn fresh_token_record(
    cfg: &ContractConfig,
    key: &StateKey,
    scope: BTreeSet<Operation>,
    nonce: &str,
    now: u64,
) -> TokenRecord {
    TokenRecord {
        access_token: derive_token(nonce, key, now),
        issued_at: now,
        status: ConsentStatus::Approved,
        operation: None,
        scope,
        expires_in: cfg.token_lifetime_s,
        refresh_count: 1,
    }
}

/// args: pk_subject, sig_subject, pk_controller, sig_controller, pk_enc,
/// controller_ops (comma list), nonce.
///
/// Creates the consent record (subject holds every operation, controller
/// the listed ones) and issues first tokens to subject and controller so
/// both can face the resource server from the start.
pub fn registration(
    ledger: &Ledger,
    cfg: &ContractConfig,
    inv: &Invocation,
) -> Result<Execution, String> {
    let a = Args(&inv.args);
    a.expect_len(7)?;
    let pk_subject = a.pk(0)?;
    let pk_controller = a.pk(2)?;
    let pk_enc = a.pk(4)?;
    let controller_ops =
        Operation::parse_list(a.str(5)?).ok_or_else(|| reason::BAD_ARGS.to_string())?;
    let nonce = a.str(6)?;

    let payload = signing_payload(
        "registration",
        &[a.str(0)?, a.str(2)?, a.str(4)?, a.str(5)?],
        nonce,
    );
    if !pk_subject.verify(&payload, &a.sig(1, pk_subject)?)
        || !pk_controller.verify(&payload, &a.sig(3, pk_controller)?)
    {
        return Err(reason::SIGNATURE.into());
    }

    let key = StateKey::consent(&pk_subject, &pk_controller, &pk_enc);
    if ledger.consent().get_state(&key).is_some() {
        return Err(reason::ALREADY_REGISTERED.into());
    }

    let now = inv.submitted_at;
    let mut policy = AccessPolicy::default();
    policy.grant_all(pk_subject);
    for op in &controller_ops {
        policy.grant(pk_controller, *op);
    }
    let record = ConsentRecord {
        en_pointer: Vec::new(),
        policy,
        pk_enc,
        hash: None,
        timestamp: now,
    };

    let subject_key = StateKey::token(&pk_subject, &pk_controller, &pk_subject, &pk_enc);
    let subject_token = fresh_token_record(
        cfg,
        &subject_key,
        Operation::parse_list("create,read,update,delete").unwrap(),
        nonce,
        now,
    );
    let controller_key = StateKey::token(&pk_subject, &pk_controller, &pk_controller, &pk_enc);
    let controller_token = fresh_token_record(cfg, &controller_key, controller_ops, nonce, now);

    let mut writes = vec![consent_write(&key, &record)];
    writes.extend(token_writes(&subject_key, &subject_token));
    writes.extend(token_writes(&controller_key, &controller_token));

    Ok(Execution::accept(
        json!({
            "record_key": key.as_str(),
            "owner_token": subject_token.access_token,
            "controller_token": controller_token.access_token,
        }),
        writes,
    ))
}

/// args: pk_subject, pk_controller, pk_enc, uploader_pk, sig,
/// en_pointer (hex ciphertext), data_hash (hex), nonce.
///
/// Stores the encrypted off-chain pointer and the content digest. Only the
/// subject or the controller may upload. The pointer arrives already
/// encrypted under pk_enc; the chain never sees it in clear.
pub fn data_upload(ledger: &Ledger, inv: &Invocation) -> Result<Execution, String> {
    let a = Args(&inv.args);
    a.expect_len(8)?;
    let pk_subject = a.pk(0)?;
    let pk_controller = a.pk(1)?;
    let pk_enc = a.pk(2)?;
    let uploader = a.pk(3)?;
    let en_pointer = hex::decode(a.str(5)?).map_err(|_| reason::BAD_ARGS.to_string())?;
    let data_hash = Digest::from_hex(a.str(6)?).ok_or_else(|| reason::BAD_ARGS.to_string())?;
    let nonce = a.str(7)?;

    if uploader != pk_subject && uploader != pk_controller {
        return Err(reason::POLICY.into());
    }
    let payload = signing_payload(
        "data_upload",
        &[
            a.str(0)?,
            a.str(1)?,
            a.str(2)?,
            a.str(3)?,
            a.str(5)?,
            a.str(6)?,
        ],
        nonce,
    );
    if !uploader.verify(&payload, &a.sig(4, uploader)?) {
        return Err(reason::SIGNATURE.into());
    }

    let key = StateKey::consent(&pk_subject, &pk_controller, &pk_enc);
    let mut record = read_consent(ledger, &key).ok_or_else(|| reason::UNKNOWN_RECORD.to_string())?;
    record.en_pointer = en_pointer;
    record.hash = Some(data_hash);
    record.timestamp = inv.submitted_at;

    Ok(Execution::accept(json!({}), vec![consent_write(&key, &record)]))
}

/// args: pk_subject, pk_controller, pk_enc, pk_processor, op,
/// sig_subject, sig_controller, sig_processor, nonce.
///
/// Multi-party consent: all three signatures over the same payload must
/// verify, else the grant is rejected whole. On success the processor
/// joins the policy for `op` and receives a fresh full-lifetime token
/// whose scope now includes `op`.
pub fn grant_consent(
    ledger: &Ledger,
    cfg: &ContractConfig,
    inv: &Invocation,
) -> Result<Execution, String> {
    let a = Args(&inv.args);
    a.expect_len(9)?;
    let pk_subject = a.pk(0)?;
    let pk_controller = a.pk(1)?;
    let pk_enc = a.pk(2)?;
    let pk_processor = a.pk(3)?;
    let op = a.op(4)?;
    let nonce = a.str(8)?;

    let key = StateKey::consent(&pk_subject, &pk_controller, &pk_enc);
    let mut record = read_consent(ledger, &key).ok_or_else(|| reason::UNKNOWN_RECORD.to_string())?;

    let payload = signing_payload(
        "grant_consent",
        &[a.str(0)?, a.str(1)?, a.str(2)?, a.str(3)?, a.str(4)?],
        nonce,
    );
    let s1 = pk_subject.verify(&payload, &a.sig(5, pk_subject)?);
    let s2 = pk_controller.verify(&payload, &a.sig(6, pk_controller)?);
    let s3 = pk_processor.verify(&payload, &a.sig(7, pk_processor)?);
    if !(s1 && s2 && s3) {
        return Err(reason::SIGNATURE.into());
    }

    record.policy.grant(pk_processor, op);

    let now = inv.submitted_at;
    let token_key = StateKey::token(&pk_subject, &pk_controller, &pk_processor, &pk_enc);
    let token = match read_token(ledger, &token_key) {
        Some(mut t) => {
            t.scope.insert(op);
            t.access_token = derive_token(nonce, &token_key, now);
            t.issued_at = now;
            t.status = ConsentStatus::Approved;
            t.expires_in = cfg.token_lifetime_s;
            t
        }
        None => fresh_token_record(cfg, &token_key, [op].into_iter().collect(), nonce, now),
    };

    let mut writes = vec![consent_write(&key, &record)];
    writes.extend(token_writes(&token_key, &token));
    Ok(Execution::accept(
        json!({ "access_token": token.access_token }),
        writes,
    ))
}

/// args: pk_subject, pk_controller, pk_enc, pk_processor, op,
/// signer_pk, sig, nonce.
///
/// Either the subject or the controller alone can revoke. The subject's
/// own rights are not revocable by anyone. The processor's token is
/// regenerated with the narrowed scope; an emptied scope flips the record
/// to rejected until a new grant restores it.
pub fn revoke_consent(ledger: &Ledger, inv: &Invocation) -> Result<Execution, String> {
    let a = Args(&inv.args);
    a.expect_len(8)?;
    let pk_subject = a.pk(0)?;
    let pk_controller = a.pk(1)?;
    let pk_enc = a.pk(2)?;
    let pk_processor = a.pk(3)?;
    let op = a.op(4)?;
    let signer = a.pk(5)?;
    let nonce = a.str(7)?;

    if signer != pk_subject && signer != pk_controller {
        return Err(reason::POLICY.into());
    }
    let payload = signing_payload(
        "revoke_consent",
        &[a.str(0)?, a.str(1)?, a.str(2)?, a.str(3)?, a.str(4)?],
        nonce,
    );
    if !signer.verify(&payload, &a.sig(6, signer)?) {
        return Err(reason::SIGNATURE.into());
    }
    if pk_processor == pk_subject {
        return Err(reason::OWNER_RIGHTS.into());
    }

    let key = StateKey::consent(&pk_subject, &pk_controller, &pk_enc);
    let mut record = read_consent(ledger, &key).ok_or_else(|| reason::UNKNOWN_RECORD.to_string())?;
    record.policy.revoke(&pk_processor, op);

    let now = inv.submitted_at;
    let token_key = StateKey::token(&pk_subject, &pk_controller, &pk_processor, &pk_enc);
    let mut writes = vec![consent_write(&key, &record)];
    let mut new_token = None;
    if let Some(mut t) = read_token(ledger, &token_key) {
        t.scope.remove(&op);
        t.access_token = derive_token(nonce, &token_key, now);
        t.issued_at = now;
        if t.scope.is_empty() {
            t.status = ConsentStatus::Rejected;
        }
        new_token = Some(t.access_token.clone());
        writes.extend(token_writes(&token_key, &t));
    }

    Ok(Execution::accept(json!({ "access_token": new_token }), writes))
}

/// args: pk_subject, pk_controller, pk_enc, pk_requester, op, sig, nonce.
///
/// Read path for an authorized party: proves possession of the requester
/// key, checks the policy, and returns the encrypted pointer plus the live
/// access token for the resource server. No state changes; the invocation
/// still commits so every access attempt is on the record.
pub fn data_access(ledger: &Ledger, inv: &Invocation) -> Result<Execution, String> {
    let a = Args(&inv.args);
    a.expect_len(7)?;
    let pk_subject = a.pk(0)?;
    let pk_controller = a.pk(1)?;
    let pk_enc = a.pk(2)?;
    let pk_requester = a.pk(3)?;
    let op = a.op(4)?;
    let nonce = a.str(6)?;

    let payload = signing_payload(
        "data_access",
        &[a.str(0)?, a.str(1)?, a.str(2)?, a.str(3)?, a.str(4)?],
        nonce,
    );
    if !pk_requester.verify(&payload, &a.sig(5, pk_requester)?) {
        return Err(reason::SIGNATURE.into());
    }

    let key = StateKey::consent(&pk_subject, &pk_controller, &pk_enc);
    let record = read_consent(ledger, &key).ok_or_else(|| reason::UNKNOWN_RECORD.to_string())?;
    if !record.policy.allows(&pk_requester, op) {
        return Err(reason::POLICY.into());
    }

    let token_key = StateKey::token(&pk_subject, &pk_controller, &pk_requester, &pk_enc);
    let token = read_token(ledger, &token_key).ok_or_else(|| reason::TOKEN_MISSING.to_string())?;

    Ok(Execution::accept(
        json!({
            "en_pointer": hex::encode(&record.en_pointer),
            "access_token": token.access_token,
        }),
        Vec::new(),
    ))
}

/// args: pk_subject, pk_controller, pk_enc, pk, op.
///
/// Pure policy query: would `pk` be allowed `op` right now? Always
/// answers; an unregistered dataset answers denied.
pub fn policy_check(ledger: &Ledger, inv: &Invocation) -> Result<Execution, String> {
    let a = Args(&inv.args);
    a.expect_len(5)?;
    let pk_subject = a.pk(0)?;
    let pk_controller = a.pk(1)?;
    let pk_enc = a.pk(2)?;
    let pk = a.pk(3)?;
    let op = a.op(4)?;

    let key = StateKey::consent(&pk_subject, &pk_controller, &pk_enc);
    let response = match read_consent(ledger, &key) {
        None => json!({ "allowed": false, "reason": "unknown" }),
        Some(record) => {
            if record.policy.allows(&pk, op) {
                json!({ "allowed": true, "reason": null })
            } else {
                json!({ "allowed": false, "reason": "policy" })
            }
        }
    };
    Ok(Execution::accept(response, Vec::new()))
}
