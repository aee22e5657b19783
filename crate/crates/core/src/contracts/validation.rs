//! Log-channel contract: token validation and refresh.
//!
//! Validation is the resource server's gatekeeper. The subject and the
//! controller pass on possession alone; a processor passes only while its
//! token is approved, in scope, and unexpired. Every accepted validation
//! decays the token's remaining lifetime and re-anchors it at `now`, so
//! the record always shows the truth as of its last use.

use crate::contracts::records::ConsentStatus;
use crate::contracts::{
    derive_token, read_token, reason, signing_payload, token_index_key, Args, ChannelWrite,
    ContractConfig, Execution, Invocation,
};
use crate::ledger::{Ledger, StateKey, LOG_CHANNEL};
use serde_json::json;

/// Parsed validation outcome, for callers reading contract responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub accepted: bool,
    pub reason: Option<String>,
    pub remaining_s: Option<i64>,
    pub holder: Option<String>,
}

impl Verdict {
    pub fn from_response(v: &serde_json::Value) -> Self {
        Verdict {
            accepted: v["outcome"] == "accepted",
            reason: v["reason"].as_str().map(String::from),
            remaining_s: v["remaining_s"].as_i64(),
            holder: v["holder"].as_str().map(String::from),
        }
    }
}

/// Resolves a token to its record key via the world-state index, skipping
/// entries left behind by regenerations.
pub fn resolve_token(ledger: &Ledger, token: &str) -> Option<StateKey> {
    let raw = ledger.log().get_state(&token_index_key(token))?;
    let key = StateKey::raw(String::from_utf8(raw.to_vec()).ok()?);
    let rec = read_token(ledger, &key)?;
    if rec.access_token == token {
        Some(key)
    } else {
        None
    }
}

/// args: access_token, pk, op, sig, nonce.
///
/// Accepts or rejects the presented token for `op`. Rejections carry one
/// of: signature, unknown_token, not_holder, not_approved, scope_miss,
/// expired. The remaining lifetime is computed before the expiry gate, so
/// the decision reflects the true remainder at `now`.
pub fn token_validation(ledger: &Ledger, inv: &Invocation) -> Result<Execution, String> {
    let a = Args(&inv.args);
    a.expect_len(5)?;
    let token = a.str(0)?;
    let pk = a.pk(1)?;
    let op = a.op(2)?;
    let nonce = a.str(4)?;

    let payload = signing_payload("token_validation", &[a.str(0)?, a.str(1)?, a.str(2)?], nonce);
    if !pk.verify(&payload, &a.sig(3, pk)?) {
        return Err(reason::SIGNATURE.into());
    }

    let key = resolve_token(ledger, token).ok_or_else(|| reason::UNKNOWN_TOKEN.to_string())?;
    let mut rec = read_token(ledger, &key).ok_or_else(|| reason::UNKNOWN_TOKEN.to_string())?;
    let parts = key.parts().map_err(|_| reason::UNKNOWN_TOKEN.to_string())?;
    let &[subject, controller, processor, _enc] = &parts[..] else {
        return Err(reason::UNKNOWN_TOKEN.into());
    };

    let now = inv.submitted_at;
    let remaining_ms = rec.remaining_ms(now);

    let holder = if pk == subject {
        "owner"
    } else if pk == controller {
        "controller"
    } else if pk == processor {
        "processor"
    } else {
        return Err(reason::NOT_HOLDER.into());
    };

    if holder == "processor" {
        if rec.status != ConsentStatus::Approved {
            return Err(reason::NOT_APPROVED.into());
        }
        if !rec.scope.contains(&op) {
            return Err(reason::SCOPE_MISS.into());
        }
        if remaining_ms <= 0 {
            return Err(reason::EXPIRED.into());
        }
        rec.operation = Some(op);
    }

    // Decay: the remainder re-anchors at now. Owner and controller pass
    // even once the remainder is negative.
    rec.expires_in = remaining_ms.div_euclid(1000);
    rec.issued_at = now;

    Ok(Execution::accept(
        json!({
            "outcome": "accepted",
            "holder": holder,
            "remaining_s": rec.expires_in,
        }),
        vec![ChannelWrite {
            channel: LOG_CHANNEL,
            key: key.clone(),
            value: rec.to_bytes(),
        }],
    ))
}

/// args: pk_subject, pk_controller, pk_processor, pk_enc, pk, sig, nonce.
///
/// Restores a token to full lifetime under a fresh value. Any of the
/// three relationship parties may refresh; the superseded token stops
/// validating immediately. Scope and status are untouched, so refresh
/// never widens consent.
pub fn token_refresh(
    ledger: &Ledger,
    cfg: &ContractConfig,
    inv: &Invocation,
) -> Result<Execution, String> {
    let a = Args(&inv.args);
    a.expect_len(7)?;
    let subject = a.pk(0)?;
    let controller = a.pk(1)?;
    let processor = a.pk(2)?;
    let enc = a.pk(3)?;
    let pk = a.pk(4)?;
    let nonce = a.str(6)?;

    let payload = signing_payload(
        "token_refresh",
        &[a.str(0)?, a.str(1)?, a.str(2)?, a.str(3)?, a.str(4)?],
        nonce,
    );
    if !pk.verify(&payload, &a.sig(5, pk)?) {
        return Err(reason::SIGNATURE.into());
    }
    if pk != subject && pk != controller && pk != processor {
        return Err(reason::NOT_HOLDER.into());
    }

    let key = StateKey::token(&subject, &controller, &processor, &enc);
    let mut rec = read_token(ledger, &key).ok_or_else(|| reason::UNKNOWN_RECORD.to_string())?;

    let now = inv.submitted_at;
    rec.access_token = derive_token(nonce, &key, now);
    rec.issued_at = now;
    rec.expires_in = cfg.token_lifetime_s;
    rec.refresh_count += 1;

    Ok(Execution::accept(
        json!({
            "access_token": rec.access_token,
            "refresh_count": rec.refresh_count,
        }),
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
        ],
    ))
}
