//! Per-transaction outcomes and node statistics from one simulation run.

use serde::{Deserialize, Serialize};

use crate::network::sim::TxKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimVerdict {
    Success,
    Rejected,
    Timeout,
}

impl SimVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            SimVerdict::Success => "success",
            SimVerdict::Rejected => "rejected",
            SimVerdict::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TxOutcome {
    pub tx_id: String,
    pub kind: TxKind,
    pub submitted_at_ms: f64,
    /// When the client got its answer: commit for successful writes,
    /// endorsement for reads and rejections, absent only if the run ended
    /// before the timeout fired.
    pub finished_at_ms: Option<f64>,
    pub verdict: SimVerdict,
}

impl TxOutcome {
    pub fn latency_ms(&self) -> Option<f64> {
        self.finished_at_ms.map(|f| f - self.submitted_at_ms)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeOccupancy {
    pub node: String,
    /// Time-weighted mean queue length over the whole run.
    pub mean_queue: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimReport {
    pub outcomes: Vec<TxOutcome>,
    /// Timestamp of the last processed event.
    pub horizon_ms: f64,
    pub nodes: Vec<NodeOccupancy>,
}

impl SimReport {
    pub fn count(&self, verdict: SimVerdict) -> usize {
        self.outcomes
            .iter()
            .filter(|o| o.verdict == verdict)
            .count()
    }

    /// Latencies of successful transactions, in submission order.
    pub fn success_latencies_ms(&self) -> Vec<f64> {
        self.outcomes
            .iter()
            .filter(|o| o.verdict == SimVerdict::Success)
            .filter_map(TxOutcome::latency_ms)
            .collect()
    }

    pub fn mean_queue_occupancy(&self) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        self.nodes.iter().map(|n| n.mean_queue).sum::<f64>() / self.nodes.len() as f64
    }

    /// One row per transaction: tx_id, kind, submitted_at, finished_at,
    /// verdict. Times in milliseconds; finished_at empty when absent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tx_id,kind,submitted_at_ms,finished_at_ms,verdict\n");
        for o in &self.outcomes {
            let finished = o
                .finished_at_ms
                .map(|f| format!("{f:.3}"))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.3},{},{}\n",
                o.tx_id,
                o.kind.as_str(),
                o.submitted_at_ms,
                finished,
                o.verdict.as_str()
            ));
        }
        out
    }
}
