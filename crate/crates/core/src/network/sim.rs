//! Discrete-event simulation of the endorse, order, commit pipeline.
//!
//! Topology: clients fan proposals out to endorsing peers; each peer holds a
//! full replica of both ledgers and executes the contract at endorsement
//! time, voting with a digest of the execution it saw. Once a quorum of
//! identical digests is back, a read returns to the client and a write is
//! handed to the ordering service, which batches transactions per channel
//! into blocks and delivers them to every live peer. Peers apply sealed
//! blocks blindly, in height order, so replicas stay byte-identical.
//!
//! Failure model: crash faults only. A crashed peer loses its queue and
//! stops endorsing and applying; on recovery it fetches the blocks it
//! missed from the sequencer before rejoining. Ordering replicas share one
//! durable logical queue, so sequencing pauses while every replica is down
//! and resumes afterwards. Quorums that crashes make unreachable surface as
//! client timeouts, never as early rejections.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::contracts::{self, ContractConfig, Execution, Invocation};
use crate::crypto::Signature;
use crate::ledger::{
    Digest, Ledger, Transaction, TxStatus, Write, CONSENT_CHANNEL, LOG_CHANNEL,
};
use crate::network::config::NetworkConfig;
use crate::network::report::{NodeOccupancy, SimReport, SimVerdict, TxOutcome};

const NS_PER_MS: f64 = 1_000_000.0;
const CHANNELS: [&str; 2] = [CONSENT_CHANNEL, LOG_CHANNEL];

fn ms_to_ns(ms: f64) -> u64 {
    (ms * NS_PER_MS).round() as u64
}

fn ns_to_ms(ns: u64) -> f64 {
    ns as f64 / NS_PER_MS
}

/// Traffic class. Reads stop at endorsement; writes ride the full pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TxKind {
    Read,
    Write,
}

impl TxKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TxKind::Read => "READ",
            TxKind::Write => "WRITE",
        }
    }
}

/// Scheduled crash or recovery of one node.
#[derive(Clone, Copy, Debug)]
pub enum Fault {
    CrashPeer(usize),
    RecoverPeer(usize),
    CrashOsn(usize),
    RecoverOsn(usize),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Verdict {
    Success,
    Rejected,
    TimedOut,
}

struct Proposal {
    kind: TxKind,
    inv: Invocation,
    sig: Signature,
    /// Arrival at the client pool; the timeout clock starts here.
    submitted_at: u64,
    /// Peers the dispatch reached; if all respond without a quorum the
    /// disagreement is final.
    reachable: usize,
    responded: usize,
    votes: HashMap<Digest, (usize, Execution)>,
    required: usize,
    /// Set once a quorum (or final disagreement) is reached; later
    /// endorsements are ignored.
    decided: bool,
    /// The quorum execution, carried to the ordering service.
    endorsed: Option<Execution>,
    verdict: Option<Verdict>,
    finished_at: Option<u64>,
    /// Blocks this write still waits on, as (channel index, height).
    blocks_pending: Vec<(usize, u64)>,
    holds_slot: bool,
}

struct Peer {
    ledger: Ledger,
    up: bool,
    /// Invalidates in-flight service completions on crash.
    epoch: u64,
    queue: VecDeque<usize>,
    busy: Option<usize>,
    /// Blocks delivered ahead of the next expected height.
    staged: [BTreeMap<u64, usize>; 2],
    /// Endorsements from this peer carry a flipped digest; test hook for
    /// the disagreement path.
    corrupt: bool,
    occupancy: OccupancyMeter,
}

struct Sequencer {
    /// Canonical chains; peers catch up from here after recovery.
    ledger: Ledger,
    queue: VecDeque<usize>,
    busy: Option<usize>,
    /// Open batch per channel: proposal index plus its sealed transaction.
    batches: [Vec<(usize, Transaction)>; 2],
    /// Invalidates stale batch-timeout events once a batch is cut.
    batch_gen: [u64; 2],
    occupancy: OccupancyMeter,
}

#[derive(Default)]
struct OccupancyMeter {
    integral_ms: f64,
    len: usize,
    last_ns: u64,
}

impl OccupancyMeter {
    fn set(&mut self, now: u64, len: usize) {
        self.integral_ms += self.len as f64 * ns_to_ms(now.saturating_sub(self.last_ns));
        self.len = len;
        self.last_ns = now;
    }

    fn mean(&mut self, horizon: u64) -> f64 {
        self.set(horizon, self.len);
        if horizon == 0 {
            0.0
        } else {
            self.integral_ms / ns_to_ms(horizon)
        }
    }
}

enum Event {
    Arrival(usize),
    PeerReceive {
        peer: usize,
        idx: usize,
    },
    PeerDone {
        peer: usize,
        epoch: u64,
    },
    Endorse {
        idx: usize,
        digest: Digest,
        exec: Execution,
    },
    OsnReceive(usize),
    OsnDone,
    BatchCut {
        chan: usize,
        gen: u64,
    },
    Deliver {
        peer: usize,
        chan: usize,
        height: u64,
    },
    Timeout(usize),
    FaultAt(Fault),
}

/// One simulated deployment plus its scripted traffic and faults.
pub struct Simulation {
    cfg: NetworkConfig,
    contract_cfg: ContractConfig,
    now: u64,
    next_event: u64,
    events: BinaryHeap<Reverse<(u64, u64)>>,
    payloads: HashMap<u64, Event>,
    rng: ChaCha12Rng,
    proposals: Vec<Proposal>,
    peers: Vec<Peer>,
    osn_up: Vec<bool>,
    sequencer: Sequencer,
    free_slots: usize,
    admission: VecDeque<usize>,
    /// Writes that arrived while every ordering replica was down.
    osn_parked: Vec<usize>,
    /// Peers still due to apply a block, keyed by (channel, height).
    block_waits: HashMap<(usize, u64), Vec<usize>>,
    /// Proposals inside each block, for commit accounting.
    block_members: HashMap<(usize, u64), Vec<usize>>,
    tx_seq: u64,
}

impl Simulation {
    /// `genesis` seeds every replica and the sequencer's canonical chains,
    /// so scripted traffic can run against pre-registered state.
    pub fn new(cfg: NetworkConfig, contract_cfg: ContractConfig, genesis: &Ledger) -> Self {
        cfg.validate().expect("invalid network config");
        let peers = (0..cfg.peer_count)
            .map(|_| Peer {
                ledger: genesis.clone(),
                up: true,
                epoch: 0,
                queue: VecDeque::new(),
                busy: None,
                staged: [BTreeMap::new(), BTreeMap::new()],
                corrupt: false,
                occupancy: OccupancyMeter::default(),
            })
            .collect();
        let rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        Simulation {
            contract_cfg,
            now: 0,
            next_event: 0,
            events: BinaryHeap::new(),
            payloads: HashMap::new(),
            rng,
            proposals: Vec::new(),
            peers,
            osn_up: vec![true; cfg.osn_count],
            sequencer: Sequencer {
                ledger: genesis.clone(),
                queue: VecDeque::new(),
                busy: None,
                batches: [Vec::new(), Vec::new()],
                batch_gen: [0, 0],
                occupancy: OccupancyMeter::default(),
            },
            free_slots: cfg.client_count,
            admission: VecDeque::new(),
            osn_parked: Vec::new(),
            block_waits: HashMap::new(),
            block_members: HashMap::new(),
            tx_seq: 0,
            cfg,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    /// Queue one signed invocation to arrive at `at_ms`.
    pub fn submit(&mut self, at_ms: f64, kind: TxKind, inv: Invocation, sig: Signature) {
        let idx = self.proposals.len();
        self.proposals.push(Proposal {
            kind,
            inv,
            sig,
            submitted_at: ms_to_ns(at_ms),
            reachable: 0,
            responded: 0,
            votes: HashMap::new(),
            required: 0,
            decided: false,
            endorsed: None,
            verdict: None,
            finished_at: None,
            blocks_pending: Vec::new(),
            holds_slot: false,
        });
        self.push_at(ms_to_ns(at_ms), Event::Arrival(idx));
    }

    pub fn schedule_fault(&mut self, at_ms: f64, fault: Fault) {
        self.push_at(ms_to_ns(at_ms), Event::FaultAt(fault));
    }

    /// Make `peer` vote with corrupted digests from now on.
    pub fn corrupt_peer(&mut self, peer: usize) {
        self.peers[peer].corrupt = true;
    }

    pub fn peer_ledger(&self, peer: usize) -> &Ledger {
        &self.peers[peer].ledger
    }

    pub fn peer_is_up(&self, peer: usize) -> bool {
        self.peers[peer].up
    }

    pub fn sequencer_ledger(&self) -> &Ledger {
        &self.sequencer.ledger
    }

    fn push_at(&mut self, at: u64, ev: Event) {
        let id = self.next_event;
        self.next_event += 1;
        self.payloads.insert(id, ev);
        self.events.push(Reverse((at, id)));
    }

    fn hop_ns(&mut self) -> u64 {
        let j = self.cfg.hop_latency_jitter_ms;
        let jitter = if j > 0.0 {
            self.rng.gen_range(-j..=j)
        } else {
            0.0
        };
        ms_to_ns((self.cfg.hop_latency_mean_ms + jitter).max(0.0))
    }

    fn live_peers(&self) -> Vec<usize> {
        (0..self.peers.len())
            .filter(|&p| self.peers[p].up)
            .collect()
    }

    fn any_osn_up(&self) -> bool {
        self.osn_up.iter().any(|&u| u)
    }

    /// Drain the event heap. Deterministic for a given config, script, and
    /// seed: ties break on insertion order.
    pub fn run(&mut self) -> SimReport {
        while let Some(Reverse((at, id))) = self.events.pop() {
            debug_assert!(at >= self.now, "time went backwards");
            self.now = at;
            let ev = self.payloads.remove(&id).expect("event payload");
            self.handle(ev);
        }
        self.report()
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Arrival(idx) => self.on_arrival(idx),
            Event::PeerReceive { peer, idx } => self.on_peer_receive(peer, idx),
            Event::PeerDone { peer, epoch } => self.on_peer_done(peer, epoch),
            Event::Endorse { idx, digest, exec } => self.on_endorse(idx, digest, exec),
            Event::OsnReceive(idx) => self.on_osn_receive(idx),
            Event::OsnDone => self.on_osn_done(),
            Event::BatchCut { chan, gen } => {
                if self.sequencer.batch_gen[chan] == gen
                    && !self.sequencer.batches[chan].is_empty()
                {
                    self.cut_batch(chan);
                }
            }
            Event::Deliver { peer, chan, height } => self.on_deliver(peer, chan, height),
            Event::Timeout(idx) => self.on_timeout(idx),
            Event::FaultAt(fault) => self.on_fault(fault),
        }
    }

    fn on_arrival(&mut self, idx: usize) {
        let deadline = self.proposals[idx].submitted_at + ms_to_ns(self.cfg.proposal_timeout_ms);
        self.push_at(deadline, Event::Timeout(idx));
        if self.free_slots > 0 {
            self.free_slots -= 1;
            self.proposals[idx].holds_slot = true;
            self.dispatch(idx);
        } else {
            self.admission.push_back(idx);
        }
    }

    fn dispatch(&mut self, idx: usize) {
        let targets = self.live_peers();
        self.proposals[idx].reachable = targets.len();
        self.proposals[idx].required = self
            .cfg
            .endorsement_quorum
            .unwrap_or_else(|| targets.len().max(1));
        // With no live peers nothing is scheduled and the proposal sits
        // until its timeout fires.
        for (rank, peer) in targets.into_iter().enumerate() {
            let hop = self.hop_ns();
            let at = self.now + ms_to_ns(self.cfg.fanout_overhead_ms * rank as f64) + hop;
            self.push_at(at, Event::PeerReceive { peer, idx });
        }
    }

    fn on_peer_receive(&mut self, peer: usize, idx: usize) {
        if !self.peers[peer].up {
            return;
        }
        self.peers[peer].queue.push_back(idx);
        let (now, len) = (self.now, self.peers[peer].queue.len());
        self.peers[peer].occupancy.set(now, len);
        self.try_start_peer(peer);
    }

    fn try_start_peer(&mut self, peer: usize) {
        if self.peers[peer].busy.is_some() || !self.peers[peer].up {
            return;
        }
        let Some(idx) = self.peers[peer].queue.pop_front() else {
            return;
        };
        let (now, len) = (self.now, self.peers[peer].queue.len());
        self.peers[peer].occupancy.set(now, len);
        self.peers[peer].busy = Some(idx);
        let epoch = self.peers[peer].epoch;
        let at = self.now + ms_to_ns(self.cfg.peer_service_time_ms);
        self.push_at(at, Event::PeerDone { peer, epoch });
    }

    fn on_peer_done(&mut self, peer: usize, epoch: u64) {
        if !self.peers[peer].up || self.peers[peer].epoch != epoch {
            return;
        }
        let Some(idx) = self.peers[peer].busy.take() else {
            return;
        };
        if self.proposals[idx].verdict.is_some() {
            // The client already timed out or settled; the service time was
            // spent, but there is nobody to answer.
            self.try_start_peer(peer);
            return;
        }
        let exec = self.endorse_execute(peer, idx);
        let mut digest = exec.digest();
        if self.peers[peer].corrupt {
            let mut raw = digest.0;
            raw[0] ^= 0xff;
            digest = Digest(raw);
        }
        let at = self.now + self.hop_ns();
        self.push_at(at, Event::Endorse { idx, digest, exec });
        self.try_start_peer(peer);
    }

    /// Execute against this replica's current state. The client's transport
    /// signature is checked here, before the contract sees the call.
    fn endorse_execute(&mut self, peer: usize, idx: usize) -> Execution {
        let prop = &self.proposals[idx];
        if !prop
            .inv
            .submitter
            .verify(&prop.inv.canonical_bytes(), &prop.sig)
        {
            return Execution::reject(contracts::reason::SIGNATURE);
        }
        contracts::execute(&self.peers[peer].ledger, &self.contract_cfg, &prop.inv)
    }

    fn on_endorse(&mut self, idx: usize, digest: Digest, exec: Execution) {
        let prop = &mut self.proposals[idx];
        if prop.decided || prop.verdict.is_some() {
            return;
        }
        prop.responded += 1;
        let entry = prop.votes.entry(digest).or_insert((0, exec));
        entry.0 += 1;
        if entry.0 >= prop.required {
            let winner = entry.1.clone();
            prop.decided = true;
            prop.votes.clear();
            self.on_quorum(idx, winner);
        } else if prop.responded >= prop.reachable {
            // Every reachable peer answered and no digest won: the replicas
            // disagree about this execution, so the client rejects it.
            prop.decided = true;
            self.finish(idx, Verdict::Rejected);
        }
    }

    fn on_quorum(&mut self, idx: usize, exec: Execution) {
        match self.proposals[idx].kind {
            TxKind::Read => {
                let verdict = if exec.status == TxStatus::Success {
                    Verdict::Success
                } else {
                    Verdict::Rejected
                };
                self.finish(idx, verdict);
            }
            TxKind::Write => {
                // The client learns a contract rejection now, but the
                // transaction is still ordered and committed so the trail
                // records the denial, exactly like the direct-commit path.
                if exec.status != TxStatus::Success {
                    self.finish(idx, Verdict::Rejected);
                }
                self.proposals[idx].endorsed = Some(exec);
                let at = self.now + self.hop_ns();
                self.push_at(at, Event::OsnReceive(idx));
            }
        }
    }

    fn on_osn_receive(&mut self, idx: usize) {
        if !self.any_osn_up() {
            self.osn_parked.push(idx);
            return;
        }
        self.sequencer.queue.push_back(idx);
        let (now, len) = (self.now, self.sequencer.queue.len());
        self.sequencer.occupancy.set(now, len);
        self.try_start_osn();
    }

    fn try_start_osn(&mut self) {
        if self.sequencer.busy.is_some() || !self.any_osn_up() {
            return;
        }
        let Some(idx) = self.sequencer.queue.pop_front() else {
            return;
        };
        let (now, len) = (self.now, self.sequencer.queue.len());
        self.sequencer.occupancy.set(now, len);
        self.sequencer.busy = Some(idx);
        // Sequencing pays a distribution share per deployed peer: wider
        // deployments order slower, which is what drives the scaling trend.
        let per_tx =
            self.cfg.osn_service_time_ms + self.cfg.fanout_overhead_ms * self.cfg.peer_count as f64;
        let at = self.now + ms_to_ns(per_tx);
        self.push_at(at, Event::OsnDone);
    }

    fn on_osn_done(&mut self) {
        let Some(idx) = self.sequencer.busy.take() else {
            return;
        };
        if !self.any_osn_up() {
            // The serving replica crashed mid-transaction; the durable
            // queue still holds it, so it reruns when a replica returns.
            self.sequencer.queue.push_front(idx);
            let (now, len) = (self.now, self.sequencer.queue.len());
            self.sequencer.occupancy.set(now, len);
            return;
        }
        self.order(idx);
        self.try_start_osn();
    }

    /// Append the endorsed transaction to its home-channel batch, plus a
    /// companion carrying any cross-channel writes.
    fn order(&mut self, idx: usize) {
        let exec = self.proposals[idx]
            .endorsed
            .clone()
            .expect("ordered proposals carry their endorsement");
        let home = chan_index(self.proposals[idx].inv.contract.home_channel());
        let mut per_chan: [Vec<Write>; 2] = [Vec::new(), Vec::new()];
        for w in &exec.writes {
            per_chan[chan_index(w.channel)].push(Write {
                key: w.key.clone(),
                value: w.value.clone(),
            });
        }
        self.tx_seq += 1;
        let digest = Digest::of(&self.proposals[idx].inv.canonical_bytes());
        let tx_id = format!("tx-{:06}-{}", self.tx_seq, &digest.to_hex()[..8]);
        let home_writes = std::mem::take(&mut per_chan[home]);
        self.stage_tx(home, idx, tx_id.clone(), exec.status, home_writes);
        let other = 1 - home;
        if !per_chan[other].is_empty() {
            let suffix = if CHANNELS[other] == LOG_CHANNEL { "log" } else { "3A" };
            let writes = std::mem::take(&mut per_chan[other]);
            self.stage_tx(other, idx, format!("{tx_id}/{suffix}"), exec.status, writes);
        }
    }

    fn stage_tx(
        &mut self,
        chan: usize,
        idx: usize,
        tx_id: String,
        status: TxStatus,
        writes: Vec<Write>,
    ) {
        let inv = &self.proposals[idx].inv;
        let tx = Transaction {
            tx_id,
            channel: CHANNELS[chan].to_string(),
            contract: inv.contract.as_str().to_string(),
            function: inv.function.clone(),
            args: inv.args.clone(),
            writes,
            submitter: inv.submitter,
            submitted_at: inv.submitted_at,
            status,
        };
        self.sequencer.batches[chan].push((idx, tx));
        if self.sequencer.batches[chan].len() == 1 {
            self.sequencer.batch_gen[chan] += 1;
            let gen = self.sequencer.batch_gen[chan];
            let at = self.now + ms_to_ns(self.cfg.batch_timeout_ms);
            self.push_at(at, Event::BatchCut { chan, gen });
        }
        if self.sequencer.batches[chan].len() >= self.cfg.batch_size {
            self.cut_batch(chan);
        }
    }

    fn cut_batch(&mut self, chan: usize) {
        self.sequencer.batch_gen[chan] += 1;
        let entries = std::mem::take(&mut self.sequencer.batches[chan]);
        let members: Vec<usize> = entries.iter().map(|(idx, _)| *idx).collect();
        let txs: Vec<Transaction> = entries.into_iter().map(|(_, tx)| tx).collect();
        let height = {
            let channel = self
                .sequencer
                .ledger
                .channel_mut(CHANNELS[chan])
                .expect("known channel");
            channel.append(txs).height
        };
        for &idx in &members {
            self.proposals[idx].blocks_pending.push((chan, height));
        }
        self.block_members.insert((chan, height), members);
        let live = self.live_peers();
        self.block_waits.insert((chan, height), live.clone());
        for (rank, peer) in live.into_iter().enumerate() {
            let hop = self.hop_ns();
            let at = self.now + ms_to_ns(self.cfg.fanout_overhead_ms * rank as f64) + hop;
            self.push_at(at, Event::Deliver { peer, chan, height });
        }
        // With every peer down the block still exists on the canonical
        // chain; recovered peers fetch it, and the commit completes now.
        self.complete_block_if_done(chan, height);
    }

    fn on_deliver(&mut self, peer: usize, chan: usize, height: u64) {
        if !self.peers[peer].up {
            return;
        }
        if height < self.peers[peer].ledger.channel(CHANNELS[chan]).expect("known channel").height() {
            // Already applied via recovery catch-up.
            return;
        }
        self.peers[peer].staged[chan].insert(height, 0);
        self.apply_ready(peer, chan);
    }

    fn apply_ready(&mut self, peer: usize, chan: usize) {
        loop {
            let next = self.peers[peer]
                .ledger
                .channel(CHANNELS[chan])
                .expect("known channel")
                .height();
            if self.peers[peer].staged[chan].remove(&next).is_none() {
                return;
            }
            let block = self
                .sequencer
                .ledger
                .channel(CHANNELS[chan])
                .expect("known channel")
                .blocks()[next as usize]
                .clone();
            self.peers[peer]
                .ledger
                .channel_mut(CHANNELS[chan])
                .expect("known channel")
                .append_sealed(block)
                .expect("sequencer blocks always link");
            self.mark_applied(peer, chan, next);
        }
    }

    fn mark_applied(&mut self, peer: usize, chan: usize, height: u64) {
        if let Some(waiting) = self.block_waits.get_mut(&(chan, height)) {
            waiting.retain(|&p| p != peer);
        }
        self.complete_block_if_done(chan, height);
    }

    fn complete_block_if_done(&mut self, chan: usize, height: u64) {
        let done = self
            .block_waits
            .get(&(chan, height))
            .is_some_and(|w| w.is_empty());
        if !done {
            return;
        }
        self.block_waits.remove(&(chan, height));
        let members = self
            .block_members
            .remove(&(chan, height))
            .unwrap_or_default();
        for idx in members {
            let prop = &mut self.proposals[idx];
            prop.blocks_pending.retain(|&b| b != (chan, height));
            let committed = prop.blocks_pending.is_empty() && prop.verdict.is_none();
            if committed {
                self.finish(idx, Verdict::Success);
            }
        }
    }

    fn on_timeout(&mut self, idx: usize) {
        if self.proposals[idx].verdict.is_none() {
            self.finish(idx, Verdict::TimedOut);
        }
    }

    /// Record the verdict, stamp the finish time, release the client slot.
    fn finish(&mut self, idx: usize, verdict: Verdict) {
        let prop = &mut self.proposals[idx];
        if prop.verdict.is_some() {
            return;
        }
        prop.verdict = Some(verdict);
        prop.finished_at = Some(self.now);
        if !prop.holds_slot {
            return;
        }
        prop.holds_slot = false;
        self.free_slots += 1;
        while let Some(next) = self.admission.pop_front() {
            if self.proposals[next].verdict.is_some() {
                continue;
            }
            self.free_slots -= 1;
            self.proposals[next].holds_slot = true;
            self.dispatch(next);
            break;
        }
    }

    fn on_fault(&mut self, fault: Fault) {
        match fault {
            Fault::CrashPeer(p) => {
                if !self.peers[p].up {
                    return;
                }
                self.peers[p].up = false;
                self.peers[p].epoch += 1;
                self.peers[p].busy = None;
                self.peers[p].queue.clear();
                let now = self.now;
                self.peers[p].occupancy.set(now, 0);
                self.peers[p].staged = [BTreeMap::new(), BTreeMap::new()];
                // Blocks in flight stop waiting on this replica.
                let keys: Vec<(usize, u64)> = self.block_waits.keys().copied().collect();
                for (chan, height) in keys {
                    if let Some(w) = self.block_waits.get_mut(&(chan, height)) {
                        w.retain(|&q| q != p);
                    }
                    self.complete_block_if_done(chan, height);
                }
            }
            Fault::RecoverPeer(p) => {
                if self.peers[p].up {
                    return;
                }
                self.peers[p].up = true;
                // Catch up from the sequencer's canonical chains before
                // taking new work.
                for chan in 0..CHANNELS.len() {
                    loop {
                        let next = self.peers[p]
                            .ledger
                            .channel(CHANNELS[chan])
                            .expect("known channel")
                            .height() as usize;
                        let Some(block) = self
                            .sequencer
                            .ledger
                            .channel(CHANNELS[chan])
                            .expect("known channel")
                            .blocks()
                            .get(next)
                            .cloned()
                        else {
                            break;
                        };
                        self.peers[p]
                            .ledger
                            .channel_mut(CHANNELS[chan])
                            .expect("known channel")
                            .append_sealed(block)
                            .expect("sequencer blocks always link");
                    }
                }
            }
            Fault::CrashOsn(o) => {
                self.osn_up[o] = false;
            }
            Fault::RecoverOsn(o) => {
                if self.osn_up[o] {
                    return;
                }
                self.osn_up[o] = true;
                let parked = std::mem::take(&mut self.osn_parked);
                for idx in parked {
                    self.sequencer.queue.push_back(idx);
                }
                let (now, len) = (self.now, self.sequencer.queue.len());
                self.sequencer.occupancy.set(now, len);
                self.try_start_osn();
            }
        }
    }

    fn report(&mut self) -> SimReport {
        let horizon = self.now;
        let outcomes: Vec<TxOutcome> = self
            .proposals
            .iter()
            .enumerate()
            .map(|(i, p)| TxOutcome {
                tx_id: format!("prop-{i:06}"),
                kind: p.kind,
                submitted_at_ms: ns_to_ms(p.submitted_at),
                finished_at_ms: p.finished_at.map(ns_to_ms),
                verdict: match p.verdict {
                    Some(Verdict::Success) => SimVerdict::Success,
                    Some(Verdict::Rejected) => SimVerdict::Rejected,
                    _ => SimVerdict::Timeout,
                },
            })
            .collect();
        let mut nodes = Vec::new();
        for (i, peer) in self.peers.iter_mut().enumerate() {
            nodes.push(NodeOccupancy {
                node: format!("peer-{i}"),
                mean_queue: peer.occupancy.mean(horizon),
            });
        }
        nodes.push(NodeOccupancy {
            node: "sequencer".to_string(),
            mean_queue: self.sequencer.occupancy.mean(horizon),
        });
        SimReport {
            outcomes,
            horizon_ms: ns_to_ms(horizon),
            nodes,
        }
    }
}

fn chan_index(name: &str) -> usize {
    if name == CONSENT_CHANNEL {
        0
    } else {
        1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Fixture;

    /// Jitter-free shape so event times are exact sums.
    fn quiet_cfg() -> NetworkConfig {
        NetworkConfig {
            peer_count: 4,
            osn_count: 3,
            endorsement_quorum: None,
            batch_size: 1,
            batch_timeout_ms: 200.0,
            hop_latency_mean_ms: 5.0,
            hop_latency_jitter_ms: 0.0,
            peer_service_time_ms: 2.0,
            osn_service_time_ms: 5.0,
            fanout_overhead_ms: 0.0,
            proposal_timeout_ms: 10_000.0,
            client_count: 1_000,
            seed: 1,
        }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn read_latency_is_hop_service_hop() {
        let mut fixture = Fixture::build(11, 2, 2).unwrap();
        let mut sim = Simulation::new(quiet_cfg(), fixture.contract_config.clone(), &fixture.genesis);
        let (inv, sig) = fixture.read_invocation(0);
        sim.submit(0.0, TxKind::Read, inv, sig);
        let report = sim.run();
        assert_eq!(report.outcomes.len(), 1);
        let o = &report.outcomes[0];
        assert_eq!(o.verdict, SimVerdict::Success);
        assert!(close(o.latency_ms().unwrap(), 12.0), "got {:?}", o.latency_ms());
        // Reads never touch the chains.
        for p in 0..4 {
            assert_eq!(
                sim.peer_ledger(p).consent().height(),
                fixture.genesis.consent().height()
            );
        }
    }

    #[test]
    fn write_latency_adds_ordering_and_delivery() {
        let mut fixture = Fixture::build(12, 2, 2).unwrap();
        let mut sim = Simulation::new(quiet_cfg(), fixture.contract_config.clone(), &fixture.genesis);
        let (inv, sig) = fixture.write_invocation(0);
        sim.submit(0.0, TxKind::Write, inv, sig);
        let report = sim.run();
        let o = &report.outcomes[0];
        assert_eq!(o.verdict, SimVerdict::Success);
        // hop + service + hop + hop + sequencing + hop.
        assert!(close(o.latency_ms().unwrap(), 27.0), "got {:?}", o.latency_ms());
        // A grant writes consent state plus token state, so both channels
        // grew by exactly one block on every replica.
        for p in 0..4 {
            let ledger = sim.peer_ledger(p);
            assert_eq!(ledger.consent().height(), fixture.genesis.consent().height() + 1);
            assert_eq!(ledger.log().height(), fixture.genesis.log().height() + 1);
            assert!(matches!(ledger.consent().verify(), crate::ledger::ChainVerdict::Ok));
        }
    }

    #[test]
    fn batches_cut_at_size_and_at_timeout() {
        let mut cfg = quiet_cfg();
        cfg.batch_size = 3;
        let mut fixture = Fixture::build(13, 4, 2).unwrap();
        let mut sim = Simulation::new(cfg, fixture.contract_config.clone(), &fixture.genesis);
        for t in 0..3u64 {
            let (inv, sig) = fixture.write_invocation(t);
            sim.submit(t as f64, TxKind::Write, inv, sig);
        }
        let (inv, sig) = fixture.write_invocation(100);
        sim.submit(100.0, TxKind::Write, inv, sig);
        let report = sim.run();
        assert!(report.outcomes.iter().all(|o| o.verdict == SimVerdict::Success));
        // The first three share a size-cut block; the straggler waits for
        // the batch timeout: 100 -> endorsed 112 -> ordered 122 -> cut at
        // 322 -> applied 327.
        assert!(close(report.outcomes[2].finished_at_ms.unwrap(), 37.0));
        assert!(close(report.outcomes[3].latency_ms().unwrap(), 227.0));
        let consent = sim.peer_ledger(0).consent();
        assert_eq!(consent.height(), fixture.genesis.consent().height() + 2);
        let blocks = consent.blocks();
        assert_eq!(blocks[blocks.len() - 2].txs.len(), 3);
        assert_eq!(blocks[blocks.len() - 1].txs.len(), 1);
    }

    #[test]
    fn disagreeing_replica_fails_full_quorum_but_not_partial() {
        let mut fixture = Fixture::build(14, 2, 2).unwrap();
        let (inv, sig) = fixture.read_invocation(0);
        let mut sim = Simulation::new(quiet_cfg(), fixture.contract_config.clone(), &fixture.genesis);
        sim.corrupt_peer(3);
        sim.submit(0.0, TxKind::Read, inv.clone(), sig.clone());
        let report = sim.run();
        assert_eq!(report.outcomes[0].verdict, SimVerdict::Rejected);

        let mut cfg = quiet_cfg();
        cfg.endorsement_quorum = Some(3);
        let mut sim = Simulation::new(cfg, fixture.contract_config.clone(), &fixture.genesis);
        sim.corrupt_peer(3);
        sim.submit(0.0, TxKind::Read, inv, sig);
        let report = sim.run();
        assert_eq!(report.outcomes[0].verdict, SimVerdict::Success);
    }

    #[test]
    fn no_live_peers_means_timeout_not_rejection() {
        let mut cfg = quiet_cfg();
        cfg.proposal_timeout_ms = 500.0;
        let mut fixture = Fixture::build(15, 2, 2).unwrap();
        let mut sim = Simulation::new(cfg, fixture.contract_config.clone(), &fixture.genesis);
        for p in 0..4 {
            sim.schedule_fault(1.0, Fault::CrashPeer(p));
        }
        let (inv, sig) = fixture.read_invocation(10);
        sim.submit(10.0, TxKind::Read, inv, sig);
        let report = sim.run();
        let o = &report.outcomes[0];
        assert_eq!(o.verdict, SimVerdict::Timeout);
        assert!(close(o.latency_ms().unwrap(), 500.0));
    }

    #[test]
    fn ordering_pauses_while_every_replica_is_down() {
        let mut fixture = Fixture::build(16, 2, 2).unwrap();
        let mut sim = Simulation::new(quiet_cfg(), fixture.contract_config.clone(), &fixture.genesis);
        for o in 0..3 {
            sim.schedule_fault(1.0, Fault::CrashOsn(o));
        }
        sim.schedule_fault(2_000.0, Fault::RecoverOsn(0));
        let (inv, sig) = fixture.write_invocation(10);
        sim.submit(10.0, TxKind::Write, inv, sig);
        let report = sim.run();
        let o = &report.outcomes[0];
        assert_eq!(o.verdict, SimVerdict::Success);
        // Parked at the sequencer from 27 ms until recovery at 2000 ms.
        assert!(close(o.finished_at_ms.unwrap(), 2_010.0), "got {:?}", o.finished_at_ms);
    }

    #[test]
    fn client_pool_serializes_when_exhausted() {
        let mut cfg = quiet_cfg();
        cfg.client_count = 1;
        let mut fixture = Fixture::build(17, 2, 2).unwrap();
        let mut sim = Simulation::new(cfg, fixture.contract_config.clone(), &fixture.genesis);
        let (inv, sig) = fixture.read_invocation(0);
        sim.submit(0.0, TxKind::Read, inv, sig);
        let (inv, sig) = fixture.read_invocation(0);
        sim.submit(0.5, TxKind::Read, inv, sig);
        let report = sim.run();
        assert!(close(report.outcomes[0].latency_ms().unwrap(), 12.0));
        // Second waits for the only slot: dispatched at 12, done at 24.
        assert!(close(report.outcomes[1].latency_ms().unwrap(), 23.5));
    }

    #[test]
    fn crashed_peer_recovers_and_replicas_converge() {
        let mut cfg = quiet_cfg();
        cfg.batch_size = 10;
        cfg.hop_latency_jitter_ms = 2.0;
        cfg.fanout_overhead_ms = 0.2;
        let mut fixture = Fixture::build(18, 4, 3).unwrap();
        let mut sim = Simulation::new(cfg, fixture.contract_config.clone(), &fixture.genesis);
        for i in 0..60u64 {
            let t = 25 + i * 50;
            let (inv, sig) = fixture.write_invocation(t);
            sim.submit(t as f64, TxKind::Write, inv, sig);
        }
        sim.schedule_fault(820.0, Fault::CrashPeer(1));
        sim.schedule_fault(2_010.0, Fault::RecoverPeer(1));
        let report = sim.run();
        let successes = report.count(SimVerdict::Success);
        assert!(successes >= 58, "only {successes}/60 committed");
        // Every replica ends byte-identical to the canonical chains,
        // including the one that crashed and caught back up.
        for chan in [CONSENT_CHANNEL, LOG_CHANNEL] {
            let canonical = sim.sequencer_ledger().channel(chan).unwrap().export_ndjson();
            for p in 0..4 {
                assert!(sim.peer_is_up(p));
                let replica = sim.peer_ledger(p).channel(chan).unwrap();
                assert_eq!(replica.export_ndjson(), canonical, "peer {p} diverged on {chan}");
                assert!(matches!(replica.verify(), crate::ledger::ChainVerdict::Ok));
                assert!(replica.state_matches_replay());
            }
        }
    }

    #[test]
    fn identical_seeds_replay_identically() {
        let run = || {
            let mut fixture = Fixture::build(19, 3, 2).unwrap();
            let mut sim =
                Simulation::new(quiet_cfg(), fixture.contract_config.clone(), &fixture.genesis);
            for i in 0..20u64 {
                let t = i * 7;
                let kind = if i % 3 == 0 { TxKind::Write } else { TxKind::Read };
                let (inv, sig) = fixture.invocation(kind, t);
                sim.submit(t as f64, kind, inv, sig);
            }
            sim.run().to_csv()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_grids_are_rejected_when_malformed() {
        let bad = NetworkConfig {
            peer_count: 0,
            ..quiet_cfg()
        };
        assert!(bad.validate().is_err());
    }
}
