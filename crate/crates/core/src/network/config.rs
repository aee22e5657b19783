//! Simulated network shape and timing parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed network config: {0}")]
    Parse(String),
    #[error("invalid network config: {0}")]
    Invalid(String),
}

/// Everything the simulator needs to shape one deployment. Service times
/// are deterministic; only per-hop latency carries jitter, drawn from the
/// seeded generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Endorsing peers holding full ledger replicas.
    pub peer_count: usize,
    /// Ordering-service replicas behind one logical sequencer.
    pub osn_count: usize,
    /// Matching endorsements required; `None` means all peers live at
    /// dispatch time.
    pub endorsement_quorum: Option<usize>,
    /// Transactions per block before an immediate cut.
    pub batch_size: usize,
    /// Oldest-transaction age forcing a cut, milliseconds.
    pub batch_timeout_ms: f64,
    /// One network hop: mean and half-width of the uniform jitter, ms.
    pub hop_latency_mean_ms: f64,
    pub hop_latency_jitter_ms: f64,
    /// Proposal execution time at a peer, ms.
    pub peer_service_time_ms: f64,
    /// Sequencing time per transaction, ms.
    pub osn_service_time_ms: f64,
    /// Per-peer distribution cost, ms. Dispatch and block delivery stagger
    /// by this much per target, and sequencing pays it once per deployed
    /// peer for every transaction; it is what makes wide deployments
    /// slower.
    pub fanout_overhead_ms: f64,
    /// Client gives up waiting after this long, ms.
    pub proposal_timeout_ms: f64,
    /// Concurrent in-flight submissions across all clients.
    pub client_count: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            peer_count: 4,
            osn_count: 3,
            endorsement_quorum: None,
            batch_size: 10,
            batch_timeout_ms: 500.0,
            hop_latency_mean_ms: 5.0,
            hop_latency_jitter_ms: 2.0,
            peer_service_time_ms: 2.0,
            osn_service_time_ms: 5.0,
            fanout_overhead_ms: 0.2,
            proposal_timeout_ms: 10_000.0,
            client_count: 1_000,
            seed: 7,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.peer_count == 0 {
            return Err(ConfigError::Invalid("peer_count must be positive".into()));
        }
        if self.osn_count == 0 {
            return Err(ConfigError::Invalid("osn_count must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch_size must be positive".into()));
        }
        if self.client_count == 0 {
            return Err(ConfigError::Invalid("client_count must be positive".into()));
        }
        if let Some(q) = self.endorsement_quorum {
            if q == 0 || q > self.peer_count {
                return Err(ConfigError::Invalid(format!(
                    "endorsement_quorum {q} outside 1..={}",
                    self.peer_count
                )));
            }
        }
        for (name, v) in [
            ("batch_timeout_ms", self.batch_timeout_ms),
            ("hop_latency_mean_ms", self.hop_latency_mean_ms),
            ("hop_latency_jitter_ms", self.hop_latency_jitter_ms),
            ("peer_service_time_ms", self.peer_service_time_ms),
            ("osn_service_time_ms", self.osn_service_time_ms),
            ("fanout_overhead_ms", self.fanout_overhead_ms),
            ("proposal_timeout_ms", self.proposal_timeout_ms),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.proposal_timeout_ms == 0.0 {
            return Err(ConfigError::Invalid(
                "proposal_timeout_ms must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(body: &str) -> Result<Self, ConfigError> {
        let cfg: NetworkConfig =
            toml::from_str(body).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&body)
    }
}
