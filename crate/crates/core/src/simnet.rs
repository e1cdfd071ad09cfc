// SPDX-License-Identifier: Apache-2.0

//! Deterministic discrete-event simulation of a partially synchronous
//! network.
//!
//! Events are ordered by `(time, kind, sender or owner, sequence)` with
//! deliveries before timers before injected controls. Computation is
//! instantaneous.

use std::{
    cmp::Reverse,
    collections::{BTreeSet, BinaryHeap},
    sync::Arc,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{
    adversary::{AdversaryPolicy, Disposition},
    baselines::{CertifiedSync, UncertifiedSync},
    block::Block,
    config::{ConfigError, ProtocolConfig},
    consensus::{CommitRecord, CommitStatus, Committer},
    hybrid::HybridSync,
    messages::{Message, MessageKind},
    sync::{Action, Ctx, NodeEvent, NodeSnapshot, SyncKind, Synchronizer, TimerTag},
    types::{BlockDigest, Round, SimTime, ValidatorId},
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerPolicy {
    /// Every message takes exactly its pair's base latency.
    #[default]
    Synchronous,
    /// Before GST, each message takes a uniformly random time within the
    /// bounds.
    RandomPreGst,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetworkError {
    #[error("delay matrix must be {n}x{n}")]
    Shape { n: usize },
    #[error("latency {from}->{to} exceeds the bound")]
    AboveBound { from: usize, to: usize },
    #[error("latency {from}->{to} must be positive")]
    ZeroLatency { from: usize, to: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkModel {
    /// One-way base latency for every ordered pair.
    pub delays: Vec<Vec<SimTime>>,
    pub delta_bound: SimTime,
    pub gst: SimTime,
    #[serde(default)]
    pub policy: SchedulerPolicy,
}

impl NetworkModel {
    pub fn uniform(n: usize, delta: SimTime) -> Self {
        NetworkModel {
            delays: vec![vec![delta; n]; n],
            delta_bound: delta,
            gst: SimTime::ZERO,
            policy: SchedulerPolicy::Synchronous,
        }
    }

    /// Network over an explicit matrix; the bound defaults to its largest
    /// off-diagonal entry.
    pub fn from_matrix(delays: Vec<Vec<SimTime>>) -> Result<Self, NetworkError> {
        let n = delays.len();
        let bound = delays
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, d)| *d))
            .max()
            .unwrap_or(SimTime(1));
        let net = NetworkModel { delays, delta_bound: bound, gst: SimTime::ZERO, policy: SchedulerPolicy::Synchronous };
        net.validate(n)?;
        Ok(net)
    }

    pub fn validate(&self, n: usize) -> Result<(), NetworkError> {
        if self.delays.len() != n || self.delays.iter().any(|r| r.len() != n) {
            return Err(NetworkError::Shape { n });
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                if self.delays[i][j] == SimTime::ZERO {
                    return Err(NetworkError::ZeroLatency { from: i, to: j });
                }
                if self.delays[i][j] > self.delta_bound {
                    return Err(NetworkError::AboveBound { from: i, to: j });
                }
            }
        }
        Ok(())
    }

    /// Whether every direct path beats every two-hop detour.
    pub fn satisfies_triangle(&self) -> bool {
        let n = self.delays.len();
        (0..n).all(|i| {
            (0..n).all(|j| {
                i == j
                    || (0..n).all(|k| {
                        k == i || k == j || self.delays[i][j] < self.delays[i][k] + self.delays[k][j]
                    })
            })
        })
    }

    /// Delivery time of a message sent at `sent_at`, always within
    /// `[sent_at + δ, max(gst, sent_at) + Δ]`.
    pub fn delivery_time<R: Rng>(&self, from: ValidatorId, to: ValidatorId, sent_at: SimTime, rng: &mut R) -> SimTime {
        let base = self.delays[from.0][to.0];
        let earliest = sent_at + base;
        match self.policy {
            SchedulerPolicy::RandomPreGst if sent_at < self.gst => {
                let latest = self.gst + self.delta_bound;
                SimTime(rng.gen_range(earliest.0..=latest.0.max(earliest.0)))
            }
            _ => earliest,
        }
    }
}

/// Out-of-band events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "control", rename_all = "snake_case")]
pub enum Control {
    Crash { node: ValidatorId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Deliver { t: SimTime, from: ValidatorId, to: ValidatorId, msg: MessageKind, digest: Option<BlockDigest> },
    Node { t: SimTime, node: ValidatorId, #[serde(flatten)] event: NodeEvent },
}

impl TraceRecord {
    pub fn time(&self) -> SimTime {
        match self {
            TraceRecord::Deliver { t, .. } | TraceRecord::Node { t, .. } => *t,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimSetup {
    pub protocol: ProtocolConfig,
    pub kind: SyncKind,
    pub network: NetworkModel,
    pub policies: Vec<AdversaryPolicy>,
    pub controls: Vec<(SimTime, Control)>,
    pub seed: u64,
    pub horizon: SimTime,
    pub record_messages: bool,
}

impl SimSetup {
    pub fn new(protocol: ProtocolConfig, kind: SyncKind, network: NetworkModel, seed: u64) -> Self {
        let n = protocol.n;
        SimSetup {
            protocol,
            kind,
            network,
            policies: vec![AdversaryPolicy::Honest; n],
            controls: vec![],
            seed,
            horizon: SimTime::from_millis(600_000),
            record_messages: false,
        }
    }

    /// Validators with no fault of any kind.
    pub fn correct(&self) -> Vec<bool> {
        let crashed: BTreeSet<_> = self.controls.iter().map(|(_, Control::Crash { node })| *node).collect();
        self.policies.iter().enumerate().map(|(i, p)| p.is_honest() && !crashed.contains(&ValidatorId(i))).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("expected {expected} policies, got {got}")]
    PolicyCount { expected: usize, got: usize },
    #[error("{count} faulty validators exceed f = {f}")]
    TooManyFaulty { count: usize, f: usize },
    #[error("horizon {horizon} reached with {lagging:?} short of the target round")]
    NonQuiescentTimeout { horizon: SimTime, lagging: Vec<ValidatorId> },
}

pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub snapshots: Vec<NodeSnapshot>,
    pub commits: Vec<Vec<CommitRecord>>,
    /// Validators that never deviated.
    pub correct: Vec<bool>,
    pub end_time: SimTime,
    pub quiescent: bool,
}

pub fn make_synchronizer(kind: SyncKind, cfg: ProtocolConfig, me: ValidatorId) -> Box<dyn Synchronizer> {
    match kind {
        SyncKind::Hybrid => Box::new(HybridSync::new(cfg, me)),
        SyncKind::Uncertified => Box::new(UncertifiedSync::new(cfg, me)),
        SyncKind::Certified => Box::new(CertifiedSync::new(cfg, me)),
    }
}

/// Per-validator RNG seed derived from the run seed.
fn node_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Node {
    sync: Box<dyn Synchronizer>,
    committer: Committer,
    policy: AdversaryPolicy,
    rng: ChaCha8Rng,
    crashed: bool,
    hoard: Vec<(ValidatorId, Message)>,
    /// Held copies and the own round an outside link must reach first.
    paced: Vec<(Round, ValidatorId, Message)>,
}

enum Body {
    Deliver { from: ValidatorId, to: ValidatorId, msg: Message },
    Timer { owner: ValidatorId, tag: TimerTag },
    Inject(Control),
}

struct Queued {
    key: (SimTime, u8, usize, u64),
    body: Body,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

pub struct Simulation {
    setup: SimSetup,
    nodes: Vec<Node>,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    now: SimTime,
    net_rng: ChaCha8Rng,
    wake_pending: BTreeSet<usize>,
    trace: Vec<TraceRecord>,
}

impl Simulation {
    pub fn new(setup: SimSetup) -> Result<Self, SimError> {
        let cfg = &setup.protocol;
        cfg.validate()?;
        setup.network.validate(cfg.n)?;
        if setup.policies.len() != cfg.n {
            return Err(SimError::PolicyCount { expected: cfg.n, got: setup.policies.len() });
        }
        let faulty = setup.correct().iter().filter(|c| !**c).count();
        if faulty > cfg.f {
            return Err(SimError::TooManyFaulty { count: faulty, f: cfg.f });
        }
        let last_slot = Round(cfg.max_round.saturating_sub(2));
        let nodes = (0..cfg.n)
            .map(|i| Node {
                sync: make_synchronizer(setup.kind, cfg.clone(), ValidatorId(i)),
                committer: Committer::new(cfg.n, cfg.f, last_slot),
                policy: setup.policies[i].clone(),
                rng: ChaCha8Rng::seed_from_u64(node_seed(setup.seed, i)),
                crashed: false,
                hoard: vec![],
                paced: vec![],
            })
            .collect();
        let net_rng = ChaCha8Rng::seed_from_u64(node_seed(setup.seed, usize::MAX - 1));
        let mut sim = Simulation {
            setup,
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            net_rng,
            wake_pending: BTreeSet::new(),
            trace: vec![],
        };
        for (at, c) in sim.setup.controls.clone() {
            sim.push(at, 2, 0, Body::Inject(c));
        }
        Ok(sim)
    }

    fn push(&mut self, at: SimTime, rank: u8, who: usize, body: Body) {
        self.seq += 1;
        self.queue.push(Reverse(Queued { key: (at, rank, who, self.seq), body }));
    }

    fn call(&mut self, idx: usize, f: impl FnOnce(&mut dyn Synchronizer, &mut Ctx<'_>)) {
        let n = self.nodes.len();
        let now = self.now;
        let node = &mut self.nodes[idx];
        if node.crashed {
            return;
        }
        let mut ctx = Ctx::new(now, ValidatorId(idx), n, &mut node.rng);
        f(node.sync.as_mut(), &mut ctx);
        let Ctx { actions, events, delivered, wake, .. } = ctx;
        self.finish(idx, actions, events, delivered, wake);
    }

    fn record(&mut self, idx: usize, event: NodeEvent) {
        self.trace.push(TraceRecord::Node { t: self.now, node: ValidatorId(idx), event });
    }

    fn record_commits(&mut self, idx: usize, recs: Vec<CommitRecord>) {
        for rec in recs {
            let event = match rec.status {
                CommitStatus::Committed { digest, commit_time } => {
                    NodeEvent::Commit { round: rec.slot.round, leader: rec.slot.leader, digest, at: commit_time }
                }
                CommitStatus::Skipped => NodeEvent::Skip { round: rec.slot.round, leader: rec.slot.leader },
            };
            self.record(idx, event);
        }
    }

    fn finish(
        &mut self,
        idx: usize,
        actions: Vec<Action>,
        events: Vec<NodeEvent>,
        delivered: Vec<Arc<Block>>,
        wake: bool,
    ) {
        let me = ValidatorId(idx);
        let last_slot = self.nodes[idx].committer.last_slot();
        let timeout = self.setup.protocol.leader_timeout;
        for e in events {
            if let NodeEvent::RoundEntered { round } = e {
                if round.0 >= 1 && round <= last_slot {
                    self.push(self.now + timeout, 1, idx, Body::Timer { owner: me, tag: TimerTag::LeaderTimeout(round) });
                }
            }
            self.record(idx, e);
        }
        for b in delivered {
            let now = self.now;
            let recs = self.nodes[idx].committer.on_block(b, now);
            self.record_commits(idx, recs);
        }

        let crash_round = self.nodes[idx].policy.crash_round();
        if let Some(at) = crash_round {
            if self.nodes[idx].sync.current_round() >= at && !self.nodes[idx].crashed {
                self.nodes[idx].crashed = true;
                self.record(idx, NodeEvent::Crashed);
            }
        }
        let crashed = self.nodes[idx].crashed;

        let mut dump = false;
        for a in actions {
            match a {
                Action::Send { to, msg } => {
                    if crashed {
                        // Whatever was produced before the crash round still
                        // leaves; nothing else does.
                        let early = matches!(&msg, Message::Block(b)
                            if b.author == me && crash_round.is_some_and(|c| b.round < c));
                        if !early {
                            continue;
                        }
                    }
                    let disposition = match &msg {
                        Message::Block(b) if b.author == me => {
                            dump |= self.nodes[idx].policy.dumps_at(b);
                            self.nodes[idx].policy.dispose(me, b, to, self.nodes.len())
                        }
                        _ => Disposition::Send,
                    };
                    match disposition {
                        Disposition::Send => self.send(me, to, msg, self.now),
                        Disposition::Delay(d) => self.send(me, to, msg, self.now + d),
                        Disposition::Drop => {}
                        Disposition::Hoard => self.nodes[idx].hoard.push((to, msg)),
                        Disposition::Paced => {
                            let wait = match &msg {
                                Message::Block(b) => Round(b.round.0 - 1),
                                _ => unreachable!(),
                            };
                            self.nodes[idx].paced.push((wait, to, msg));
                        }
                    }
                }
                Action::Timer { at, tag } => {
                    if !crashed {
                        self.push(at, 1, idx, Body::Timer { owner: me, tag });
                    }
                }
            }
        }
        if dump {
            for (to, msg) in std::mem::take(&mut self.nodes[idx].hoard) {
                self.send(me, to, msg, self.now);
            }
        }
        if wake && !crashed && self.wake_pending.insert(idx) {
            self.push(self.now, 1, idx, Body::Timer { owner: me, tag: TimerTag::Wake });
        }
    }

    fn send(&mut self, from: ValidatorId, to: ValidatorId, msg: Message, at: SimTime) {
        let t = self.setup.network.delivery_time(from, to, at, &mut self.net_rng);
        self.push(t, 0, from.0, Body::Deliver { from, to, msg });
    }

    /// Sends held copies once `b`, from someone else, links far enough
    /// into the holder's chain.
    fn release_paced(&mut self, holder: ValidatorId, b: &Block) {
        let node = &mut self.nodes[holder.0];
        if node.paced.is_empty() || b.author == holder || node.crashed {
            return;
        }
        let Some(seen) = b.links().filter(|l| l.author == holder).map(|l| l.round).max() else { return };
        let (ready, held): (Vec<_>, Vec<_>) = std::mem::take(&mut node.paced).into_iter().partition(|(w, _, _)| *w <= seen);
        node.paced = held;
        for (_, to, msg) in ready {
            self.send(holder, to, msg, self.now);
        }
    }

    fn crash(&mut self, idx: usize) {
        if !self.nodes[idx].crashed {
            self.nodes[idx].crashed = true;
            self.record(idx, NodeEvent::Crashed);
        }
    }

    /// Runs until no event is left or the horizon passes.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        for i in 0..self.nodes.len() {
            self.call(i, |s, ctx| s.start(ctx));
        }
        let horizon = self.setup.horizon;
        let mut quiescent = true;
        while let Some(Reverse(Queued { key, body })) = self.queue.pop() {
            if key.0 > horizon {
                quiescent = false;
                break;
            }
            self.now = key.0;
            match body {
                Body::Deliver { from, to, msg } => {
                    if self.setup.record_messages {
                        self.trace.push(TraceRecord::Deliver { t: self.now, from, to, msg: msg.kind(), digest: msg.digest() });
                    }
                    if let Message::Block(b) = &msg {
                        self.release_paced(to, b);
                    }
                    self.call(to.0, |s, ctx| s.on_message(from, msg, ctx));
                }
                Body::Timer { owner, tag: TimerTag::LeaderTimeout(r) } => {
                    if !self.nodes[owner.0].crashed {
                        let recs = self.nodes[owner.0].committer.on_timeout(r);
                        self.record_commits(owner.0, recs);
                    }
                }
                Body::Timer { owner, tag } => {
                    if tag == TimerTag::Wake {
                        self.wake_pending.remove(&owner.0);
                    }
                    self.call(owner.0, |s, ctx| s.on_timer(tag, ctx));
                }
                Body::Inject(Control::Crash { node }) => self.crash(node.0),
            }
        }
        let correct: Vec<bool> = self
            .setup
            .correct()
            .iter()
            .zip(&self.nodes)
            .map(|(c, node)| *c && !node.crashed)
            .collect();
        if !quiescent {
            let target = Round(self.setup.protocol.max_round.saturating_add(1));
            let lagging: Vec<_> = (0..self.nodes.len())
                .filter(|i| correct[*i] && self.nodes[*i].sync.current_round() < target)
                .map(ValidatorId)
                .collect();
            if !lagging.is_empty() {
                return Err(SimError::NonQuiescentTimeout { horizon, lagging });
            }
        }
        Ok(RunOutput {
            snapshots: self.nodes.iter().map(|n| n.sync.snapshot()).collect(),
            commits: self.nodes.iter().map(|n| n.committer.decided().to_vec()).collect(),
            correct,
            end_time: self.now,
            quiescent,
            trace: self.trace,
        })
    }
}

/// Builds and runs a simulation.
pub fn run(setup: SimSetup) -> Result<RunOutput, SimError> {
    Simulation::new(setup)?.run()
}
