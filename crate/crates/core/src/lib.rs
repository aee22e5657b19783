//! Consent-managed personal data platform.
//!
//! The pieces, bottom up:
//!
//! - [`crypto`]: keypairs, signatures, and the hybrid envelope that keeps
//!   off-chain pointers confidential.
//! - [`ledger`]: the dual-channel, hash-linked, append-only store.
//! - [`contracts`]: deterministic contract functions for consent policy,
//!   token validation, and the audit trail over both channels.
//! - [`platform`]: a single-node platform wiring clock, contracts, and
//!   ledger together for direct use.
//! - [`network`]: a discrete-event simulator of the endorse, order, commit
//!   pipeline across many peers with crash faults.
//! - [`resource_server`]: the off-chain profile store gated by on-chain
//!   token validation, with a minimal HTTP front end.
//! - [`bench`]: workload generation and measurement over the simulator.

pub mod bench;
pub mod contracts;
pub mod crypto;
pub mod fixtures;
pub mod ledger;
pub mod network;
pub mod platform;
pub mod resource_server;
