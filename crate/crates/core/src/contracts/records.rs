//! On-chain record shapes for the two channels.

use crate::contracts::policy::{AccessPolicy, Operation};
use crate::crypto::PublicKey;
use crate::ledger::Digest;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Consent-channel record for one managed dataset: an encrypted pointer to
/// the off-chain data, the operation policy, the dataset encryption key,
/// and the content digest for integrity checks. Pointer and digest stay
/// empty until the first upload.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ConsentRecord {
    #[serde(with = "hex_bytes")]
    pub en_pointer: Vec<u8>,
    pub policy: AccessPolicy,
    pub pk_enc: PublicKey,
    pub hash: Option<Digest>,
    pub timestamp: u64,
}

impl ConsentRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).unwrap()
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
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

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsentStatus {
    Approved,
    Rejected,
}

/// Log-channel record: the live access token for one (subject, controller,
/// processor) relationship and the consent scope it carries.
///
/// `expires_in` is the remaining lifetime in whole seconds as of
/// `issued_at`; validation decays it and refresh restores it.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TokenRecord {
    /// 64-char hex, unique per issuance.
    pub access_token: String,
    /// Milliseconds.
    pub issued_at: u64,
    pub status: ConsentStatus,
    /// Last operation an accepted validation carried.
    pub operation: Option<Operation>,
    pub scope: BTreeSet<Operation>,
    /// Seconds remaining as of `issued_at`. May go negative once expired.
    pub expires_in: i64,
    pub refresh_count: u64,
}

impl TokenRecord {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).unwrap()
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }

    /// Milliseconds of validity left at `now_ms`. Computed before any
    /// expiry gate so a decision can be made on the true remainder.
    pub fn remaining_ms(&self, now_ms: u64) -> i64 {
        self.expires_in * 1000 - (now_ms as i64 - self.issued_at as i64)
    }
}
