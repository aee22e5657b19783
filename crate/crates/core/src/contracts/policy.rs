//! Access-control policy attached to each managed dataset.

use crate::crypto::PublicKey;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// The four data operations consent is granted over.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Operation {
    Create,
    Read,
    Update,
    Delete,
}

pub const ALL_OPERATIONS: [Operation; 4] = [
    Operation::Create,
    Operation::Read,
    Operation::Update,
    Operation::Delete,
];

impl Operation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Operation::Create => "create",
            Operation::Read => "read",
            Operation::Update => "update",
            Operation::Delete => "delete",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "create" => Some(Operation::Create),
            "read" => Some(Operation::Read),
            "update" => Some(Operation::Update),
            "delete" => Some(Operation::Delete),
            _ => None,
        }
    }

    /// Parses a comma-separated operation list; empty input means none.
    pub fn parse_list(s: &str) -> Option<BTreeSet<Operation>> {
        let mut out = BTreeSet::new();
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            out.insert(Operation::parse(part)?);
        }
        Some(out)
    }

    pub fn join_list(ops: &BTreeSet<Operation>) -> String {
        ops.iter()
            .map(|o| o.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl std::fmt::Display for Operation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-operation allow lists. Serialized with capitalized operation names
/// as the four map keys; sets are ordered so serialization is canonical.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct AccessPolicy {
    #[serde(rename = "Create")]
    pub create: BTreeSet<PublicKey>,
    #[serde(rename = "Read")]
    pub read: BTreeSet<PublicKey>,
    #[serde(rename = "Update")]
    pub update: BTreeSet<PublicKey>,
    #[serde(rename = "Delete")]
    pub delete: BTreeSet<PublicKey>,
}

impl AccessPolicy {
    pub fn set(&self, op: Operation) -> &BTreeSet<PublicKey> {
        match op {
            Operation::Create => &self.create,
            Operation::Read => &self.read,
            Operation::Update => &self.update,
            Operation::Delete => &self.delete,
        }
    }

    pub fn set_mut(&mut self, op: Operation) -> &mut BTreeSet<PublicKey> {
        match op {
            Operation::Create => &mut self.create,
            Operation::Read => &mut self.read,
            Operation::Update => &mut self.update,
            Operation::Delete => &mut self.delete,
        }
    }

    pub fn allows(&self, pk: &PublicKey, op: Operation) -> bool {
        self.set(op).contains(pk)
    }

    pub fn grant(&mut self, pk: PublicKey, op: Operation) {
        self.set_mut(op).insert(pk);
    }

    pub fn revoke(&mut self, pk: &PublicKey, op: Operation) {
        self.set_mut(op).remove(pk);
    }

    pub fn grant_all(&mut self, pk: PublicKey) {
        for op in ALL_OPERATIONS {
            self.grant(pk, op);
        }
    }
}
