//! Event-driven model of a permissioned deployment: endorsing peers with
//! full replicas, a crash-prone ordering service, and clients that time
//! out. Used by the benchmark harness and by the fault-tolerance tests.

pub mod config;
pub mod report;
pub mod sim;

pub use config::NetworkConfig;
pub use report::{NodeOccupancy, SimReport, SimVerdict, TxOutcome};
pub use sim::{Fault, Simulation, TxKind};
