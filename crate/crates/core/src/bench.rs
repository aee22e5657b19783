//! Benchmark harness: Poisson workloads driven through the simulated
//! network, summarized as throughput, success rate, and latency.
//!
//! The read workload issues policy queries, which stop at endorsement; the
//! write workload alternates grants and revocations, which ride the full
//! ordering pipeline. Sweeps vary offered load or deployment width while
//! holding everything else fixed, so curve shapes are attributable to one
//! variable.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{signing_payload, ContractConfig, ContractName, Invocation};
use crate::crypto::{KeyPair, Signature};
use crate::ledger::{Digest, Ledger};
use crate::network::{NetworkConfig, SimVerdict, Simulation, TxKind};
use crate::platform::{DatasetId, Platform};
use crate::contracts::policy::{Operation, ALL_OPERATIONS};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("infeasible workload: {0}")]
    Infeasible(String),
    #[error("fixture build failed: {0}")]
    Fixture(String),
}

/// One registered dataset and every key that can act on it.
pub struct DatasetActors {
    pub dataset: DatasetId,
    pub subject: KeyPair,
    pub controller: KeyPair,
    pub processors: Vec<KeyPair>,
}

/// Pre-registered state plus deterministic invocation generators. The
/// genesis ledger seeds every simulated replica, so scripted traffic runs
/// against real records.
pub struct Fixture {
    pub genesis: Ledger,
    pub contract_config: ContractConfig,
    pub datasets: Vec<DatasetActors>,
    granted: HashSet<(usize, usize, Operation)>,
    rng: ChaCha12Rng,
}

impl Fixture {
    pub fn build(seed: u64, datasets: usize, processors_per: usize) -> Result<Fixture, BenchError> {
        if datasets == 0 || processors_per == 0 {
            return Err(BenchError::Infeasible(
                "fixture needs at least one dataset and one processor".into(),
            ));
        }
        let mut platform = Platform::with_seed(seed);
        let controller_ops: BTreeSet<Operation> = [Operation::Read, Operation::Update].into();
        let mut out = Vec::with_capacity(datasets);
        for i in 0..datasets {
            let subject = platform.generate_keypair();
            let controller = platform.generate_keypair();
            let (reg, _enc) = platform
                .register(&subject, &controller, &controller_ops)
                .map_err(|e| BenchError::Fixture(e.to_string()))?;
            let pointer = format!("s3://pdm-bench/{i}/profile.json");
            platform
                .upload(
                    &reg.dataset,
                    &subject,
                    pointer.as_bytes(),
                    Digest::of(pointer.as_bytes()),
                )
                .map_err(|e| BenchError::Fixture(e.to_string()))?;
            let processors = (0..processors_per)
                .map(|_| platform.generate_keypair())
                .collect();
            out.push(DatasetActors {
                dataset: reg.dataset,
                subject,
                controller,
                processors,
            });
        }
        Ok(Fixture {
            genesis: platform.ledger().clone(),
            contract_config: platform.config().clone(),
            datasets: out,
            granted: HashSet::new(),
            rng: ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        })
    }

    fn nonce(&mut self) -> String {
        let mut raw = [0u8; 16];
        self.rng.fill(&mut raw);
        hex::encode(raw)
    }

    fn pick(&mut self) -> (usize, usize, Operation) {
        let d = self.rng.gen_range(0..self.datasets.len());
        let p = self.rng.gen_range(0..self.datasets[d].processors.len());
        let op = ALL_OPERATIONS[self.rng.gen_range(0..ALL_OPERATIONS.len())];
        (d, p, op)
    }

    /// A policy query from a random processor. Pure read: no contract-level
    /// signature, always answers.
    pub fn read_invocation(&mut self, now_ms: u64) -> (Invocation, Signature) {
        let (d, p, op) = self.pick();
        let actors = &self.datasets[d];
        let requester = &actors.processors[p];
        let inv = Invocation {
            contract: ContractName::Consent,
            function: "policy_check".to_string(),
            args: vec![
                actors.dataset.subject.to_hex(),
                actors.dataset.controller.to_hex(),
                actors.dataset.encryption.to_hex(),
                requester.public.to_hex(),
                op.as_str().to_string(),
            ],
            submitter: requester.public,
            submitted_at: now_ms,
        };
        let sig = requester.sign(&inv.canonical_bytes());
        (inv, sig)
    }

    /// A consent mutation: grants the picked combination if this generator
    /// has not granted it yet, revokes it otherwise. Both carry full
    /// signature sets, so they execute successfully.
    pub fn write_invocation(&mut self, now_ms: u64) -> (Invocation, Signature) {
        let (d, p, op) = self.pick();
        let nonce = self.nonce();
        let grant = !self.granted.contains(&(d, p, op));
        if grant {
            self.granted.insert((d, p, op));
        } else {
            self.granted.remove(&(d, p, op));
        }
        let actors = &self.datasets[d];
        let processor = &actors.processors[p];
        let ds_hex = actors.dataset.subject.to_hex();
        let dc_hex = actors.dataset.controller.to_hex();
        let enc_hex = actors.dataset.encryption.to_hex();
        let dp_hex = processor.public.to_hex();
        let inv = if grant {
            let payload = signing_payload(
                "grant_consent",
                &[&ds_hex, &dc_hex, &enc_hex, &dp_hex, op.as_str()],
                &nonce,
            );
            Invocation {
                contract: ContractName::Consent,
                function: "grant_consent".to_string(),
                args: vec![
                    ds_hex,
                    dc_hex,
                    enc_hex,
                    dp_hex,
                    op.as_str().to_string(),
                    actors.subject.sign(&payload).to_hex(),
                    actors.controller.sign(&payload).to_hex(),
                    processor.sign(&payload).to_hex(),
                    nonce,
                ],
                submitter: actors.subject.public,
                submitted_at: now_ms,
            }
        } else {
            let payload = signing_payload(
                "revoke_consent",
                &[&ds_hex, &dc_hex, &enc_hex, &dp_hex, op.as_str()],
                &nonce,
            );
            Invocation {
                contract: ContractName::Consent,
                function: "revoke_consent".to_string(),
                args: vec![
                    ds_hex,
                    dc_hex,
                    enc_hex,
                    dp_hex,
                    op.as_str().to_string(),
                    actors.subject.public.to_hex(),
                    actors.subject.sign(&payload).to_hex(),
                    nonce,
                ],
                submitter: actors.subject.public,
                submitted_at: now_ms,
            }
        };
        let sig = actors.subject.sign(&inv.canonical_bytes());
        (inv, sig)
    }

    pub fn invocation(&mut self, kind: TxKind, now_ms: u64) -> (Invocation, Signature) {
        match kind {
            TxKind::Read => self.read_invocation(now_ms),
            TxKind::Write => self.write_invocation(now_ms),
        }
    }
}

/// One benchmark point: a Poisson stream of one traffic class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub kind: TxKind,
    pub offered_load_tps: f64,
    pub duration_ms: f64,
    /// In-flight cap shared by all simulated clients.
    pub client_count: usize,
    pub datasets: usize,
    pub processors_per_dataset: usize,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: TxKind::Read,
            offered_load_tps: 100.0,
            duration_ms: 10_000.0,
            client_count: 500,
            datasets: 20,
            processors_per_dataset: 4,
            seed: 7,
        }
    }
}

impl WorkloadSpec {
    fn validate(&self) -> Result<(), BenchError> {
        if !self.offered_load_tps.is_finite() || self.offered_load_tps <= 0.0 {
            return Err(BenchError::Infeasible(format!(
                "offered load must be positive, got {}",
                self.offered_load_tps
            )));
        }
        if !self.duration_ms.is_finite() || self.duration_ms <= 0.0 {
            return Err(BenchError::Infeasible(format!(
                "duration must be positive, got {}",
                self.duration_ms
            )));
        }
        if self.client_count == 0 {
            return Err(BenchError::Infeasible("client_count must be positive".into()));
        }
        if self.datasets == 0 || self.processors_per_dataset == 0 {
            return Err(BenchError::Infeasible(
                "workload needs datasets and processors".into(),
            ));
        }
        Ok(())
    }
}

/// Summary of one run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchPoint {
    /// The swept variable: load multiple, offered tps, or peer count.
    pub axis_value: f64,
    pub kind: TxKind,
    pub offered_load_tps: f64,
    pub submitted: usize,
    pub committed: usize,
    /// Committed transactions per second of span, submission of the first
    /// to completion of the last.
    pub throughput_tps: f64,
    pub success_rate: f64,
    /// Over successful transactions; zero when nothing succeeded.
    pub latency_mean_ms: f64,
    pub latency_p95_ms: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub points: Vec<BenchPoint>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "axis_value,kind,offered_load,throughput,success_rate,latency_mean,latency_p95\n",
        );
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{:.3},{:.3},{:.4},{:.3},{:.3}\n",
                p.axis_value,
                p.kind.as_str(),
                p.offered_load_tps,
                p.throughput_tps,
                p.success_rate,
                p.latency_mean_ms,
                p.latency_p95_ms
            ));
        }
        out
    }
}

/// The load where the read path stops keeping up: every peer serves every
/// proposal, so endorsement capacity is one proposal per service time.
pub fn read_saturation_tps(net: &NetworkConfig) -> f64 {
    1000.0 / net.peer_service_time_ms
}

/// Run one Poisson workload point and summarize it. `axis_value` is echoed
/// into the result row.
pub fn run_point(
    net: &NetworkConfig,
    spec: &WorkloadSpec,
    axis_value: f64,
) -> Result<BenchPoint, BenchError> {
    spec.validate()?;
    net.validate()
        .map_err(|e| BenchError::Infeasible(e.to_string()))?;
    let mut fixture = Fixture::build(spec.seed, spec.datasets, spec.processors_per_dataset)?;
    let mut cfg = net.clone();
    cfg.client_count = spec.client_count;
    cfg.seed = spec.seed;
    let mut sim = Simulation::new(cfg, fixture.contract_config.clone(), &fixture.genesis);
    let mut arrivals = ChaCha12Rng::seed_from_u64(spec.seed.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let rate_per_ms = spec.offered_load_tps / 1000.0;
    let mut t = 0.0f64;
    loop {
        let u: f64 = arrivals.gen_range(f64::EPSILON..1.0);
        t += -u.ln() / rate_per_ms;
        if t >= spec.duration_ms {
            break;
        }
        let (inv, sig) = fixture.invocation(spec.kind, t as u64);
        sim.submit(t, spec.kind, inv, sig);
    }
    let report = sim.run();
    let submitted = report.outcomes.len();
    let committed = report.count(SimVerdict::Success);
    let latencies = report.success_latencies_ms();
    let (mean, p95) = summarize_latencies(&latencies);
    let throughput = if committed == 0 {
        0.0
    } else {
        // Span covers the whole offered window: an overloaded run that
        // stops committing early still gets charged for the load it shed.
        let first_submit = report
            .outcomes
            .iter()
            .map(|o| o.submitted_at_ms)
            .fold(f64::INFINITY, f64::min);
        let last_submit = report
            .outcomes
            .iter()
            .map(|o| o.submitted_at_ms)
            .fold(0.0f64, f64::max);
        let last_finish = report
            .outcomes
            .iter()
            .filter(|o| o.verdict == SimVerdict::Success)
            .filter_map(|o| o.finished_at_ms)
            .fold(0.0f64, f64::max);
        let span_ms = (last_finish.max(last_submit) - first_submit).max(f64::EPSILON);
        committed as f64 * 1000.0 / span_ms
    };
    Ok(BenchPoint {
        axis_value,
        kind: spec.kind,
        offered_load_tps: spec.offered_load_tps,
        submitted,
        committed,
        throughput_tps: throughput,
        success_rate: if submitted == 0 {
            0.0
        } else {
            committed as f64 / submitted as f64
        },
        latency_mean_ms: mean,
        latency_p95_ms: p95,
    })
}

fn summarize_latencies(latencies: &[f64]) -> (f64, f64) {
    if latencies.is_empty() {
        return (0.0, 0.0);
    }
    let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let mut sorted = latencies.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite latency"));
    let idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    (mean, sorted[idx])
}

/// Sweep offered load over multiples of a base rate; axis is the multiple.
pub fn sweep_loads(
    net: &NetworkConfig,
    spec: &WorkloadSpec,
    base_tps: f64,
    multiples: &[f64],
) -> Result<BenchReport, BenchError> {
    if multiples.is_empty() {
        return Err(BenchError::Infeasible("empty load grid".into()));
    }
    let mut report = BenchReport::default();
    for &m in multiples {
        let mut point_spec = spec.clone();
        point_spec.offered_load_tps = base_tps * m;
        report.points.push(run_point(net, &point_spec, m)?);
    }
    Ok(report)
}

/// Sweep deployment width at fixed load; axis is the peer count.
pub fn sweep_peers(
    net: &NetworkConfig,
    spec: &WorkloadSpec,
    peer_counts: &[usize],
) -> Result<BenchReport, BenchError> {
    if peer_counts.is_empty() {
        return Err(BenchError::Infeasible("empty peer grid".into()));
    }
    let mut report = BenchReport::default();
    for &peers in peer_counts {
        let mut cfg = net.clone();
        cfg.peer_count = peers;
        report.points.push(run_point(&cfg, spec, peers as f64)?);
    }
    Ok(report)
}
