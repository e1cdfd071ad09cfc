// SPDX-License-Identifier: Apache-2.0

//! Metrics recomputed from a trace and the scenario that produced it.
//!
//! Round `r` ends when the slowest honest validator enters `r + 1`; its
//! latency is the gap to the end of round `r - 1`. A slot's consensus
//! latency runs from its leader's proposal to the commit at the slowest
//! honest validator.

use std::collections::BTreeMap;

use blocksync_core::{
    adversary::AdversaryPolicy,
    messages::PullMode,
    simnet::TraceRecord,
    sync::{BlameRule, Class, NodeEvent},
    Round, SimTime, SyncKind, ValidatorId,
};

use crate::scenario::ScenarioConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PullCount {
    /// Pull events issued.
    pub flushes: u64,
    /// Request messages sent.
    pub requests: u64,
    /// Requested entries summed over messages.
    pub entries: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlameRecord {
    pub t: SimTime,
    pub by: ValidatorId,
    pub target: ValidatorId,
    pub round: Round,
    pub rule: BlameRule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotLatency {
    pub round: Round,
    pub leader: ValidatorId,
    /// `None` when the slot was skipped.
    pub latency: Option<SimTime>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoardReport {
    pub author: ValidatorId,
    pub dump_time: SimTime,
    /// Times an honest validator put a dumped block in its live set.
    pub live_entries: u64,
    /// First round whose latency interval starts after the dump.
    pub first_post_dump_round: u64,
    /// Round at which the committed-author histogram is back at parity.
    pub parity_round: Option<u64>,
    pub dump_round: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub seed: u64,
    pub synchronizer: SyncKind,
    pub n: usize,
    pub f: usize,
    pub delta: SimTime,
    pub rounds_target: u64,
    pub warmup_rounds: u64,
    pub recovery_rounds: u64,
    pub honest: Vec<bool>,
    /// Latency of rounds `1..`, as far as every honest validator got.
    pub round_latency: Vec<SimTime>,
    pub slots: Vec<SlotLatency>,
    /// First round of the steady-state window.
    pub steady_from: u64,
    pub pulls: BTreeMap<PullMode, PullCount>,
    pub blames: Vec<BlameRecord>,
    /// The observer's reputation table after each round it entered.
    pub reputation: Vec<(Round, Vec<i64>)>,
    /// Committed leader blocks per author at the observer.
    pub committed_authors: Vec<u64>,
    pub observer: Option<ValidatorId>,
    pub hoard: Option<HoardReport>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, c) = xs.into_iter().fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    (c > 0).then(|| s / c as f64)
}

impl MetricsReport {
    pub fn in_delta(&self, t: SimTime) -> f64 {
        t.0 as f64 / self.delta.0 as f64
    }

    pub fn mean_round_latency(&self) -> Option<f64> {
        mean(self.round_latency.iter().map(|t| self.in_delta(*t)))
    }

    pub fn steady_round_latency(&self) -> Option<f64> {
        mean(self.round_latency.iter().enumerate().filter(|(i, _)| *i as u64 + 1 >= self.steady_from).map(|(_, t)| self.in_delta(*t)))
    }

    /// Nearest-rank percentile, `p` in `[0, 100]`.
    pub fn round_latency_percentile(&self, p: f64) -> Option<f64> {
        let mut v: Vec<_> = self.round_latency.iter().map(|t| self.in_delta(*t)).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
        Some(v[rank.min(v.len()) - 1])
    }

    pub fn committed_slots(&self) -> impl Iterator<Item = (&SlotLatency, SimTime)> {
        self.slots.iter().filter_map(|s| s.latency.map(|l| (s, l)))
    }

    pub fn mean_consensus_latency(&self) -> Option<f64> {
        mean(self.committed_slots().map(|(_, l)| self.in_delta(l)))
    }

    pub fn steady_consensus_latency(&self) -> Option<f64> {
        mean(self.committed_slots().filter(|(s, _)| s.round.0 >= self.steady_from).map(|(_, l)| self.in_delta(l)))
    }

    pub fn skipped_slots(&self) -> usize {
        self.slots.iter().filter(|s| s.latency.is_none()).count()
    }

    pub fn honest_blames(&self) -> usize {
        self.blames.iter().filter(|b| self.honest[b.target.0]).count()
    }

    /// Rounds slower than `threshold` (in δ) in each window of `window`
    /// rounds.
    pub fn slow_rounds_per_window(&self, threshold: f64, window: u64) -> Vec<usize> {
        let window = window.max(1) as usize;
        self.round_latency.chunks(window).map(|w| w.iter().filter(|t| self.in_delta(**t) > threshold).count()).collect()
    }
}

/// Per-node state tracked while scanning a trace.
#[derive(Default)]
struct NodeScan {
    entered: BTreeMap<Round, SimTime>,
    commits: BTreeMap<Round, Option<(SimTime, ValidatorId)>>,
    reputation: Vec<i64>,
    reputation_rounds: Vec<(Round, Vec<i64>)>,
}

pub fn compute(cfg: &ScenarioConfig, trace: &[TraceRecord]) -> MetricsReport {
    let n = cfg.n;
    let mut honest = cfg.honest();
    let initial = cfg.protocol.initial_reputation.clone().unwrap_or_else(|| vec![0; n]);
    let mut nodes: Vec<NodeScan> = (0..n).map(|_| NodeScan { reputation: initial.clone(), ..Default::default() }).collect();
    let mut created: BTreeMap<(Round, ValidatorId), SimTime> = BTreeMap::new();
    let mut pulls: BTreeMap<PullMode, PullCount> = BTreeMap::new();
    let mut blames = vec![];
    let hoarder = cfg.faults.iter().find_map(|f| match f.policy {
        AdversaryPolicy::HoardAndDump { hoard_rounds } if hoard_rounds > 0 => Some((ValidatorId(f.validator), hoard_rounds)),
        _ => None,
    });
    let mut dump_time = None;
    let mut live_entries = 0;
    let mut live_classified: Vec<(ValidatorId, Round, ValidatorId)> = vec![];
    // Byzantine-below-honest reputation at each honest node, with the time it
    // last became true.
    let byzantine: Vec<usize> = (0..n).filter(|i| cfg.faults.iter().any(|f| f.validator == *i && f.policy.is_byzantine())).collect();
    let below = |rep: &[i64], honest: &[bool]| {
        let min_honest = (0..n).filter(|i| honest[*i]).map(|i| rep[i]).min().unwrap_or(i64::MIN);
        byzantine.iter().all(|b| rep[*b] < min_honest)
    };
    let mut converged: Vec<Option<SimTime>> =
        (0..n).map(|i| below(&nodes[i].reputation, &honest).then_some(SimTime::ZERO)).collect();

    for rec in trace {
        let TraceRecord::Node { t, node, event } = rec else { continue };
        let i = node.0;
        if i >= n {
            continue;
        }
        match event {
            NodeEvent::RoundEntered { round } => {
                nodes[i].entered.entry(*round).or_insert(*t);
                let rep = nodes[i].reputation.clone();
                nodes[i].reputation_rounds.push((*round, rep));
            }
            NodeEvent::BlockCreated { block, .. } => {
                created.entry((block.round, block.author)).or_insert(*t);
                if let Some((h, q)) = hoarder {
                    if block.author == h && block.round.0 == q && dump_time.is_none() {
                        dump_time = Some(*t);
                    }
                }
            }
            NodeEvent::Classified { block, class: Class::Live } => {
                live_classified.push((*node, block.round, block.author));
            }
            NodeEvent::PullIssued { mode, targets, entries, .. } => {
                let c = pulls.entry(*mode).or_default();
                c.flushes += 1;
                c.requests += targets.len() as u64;
                c.entries += (targets.len() * entries.len()) as u64;
            }
            NodeEvent::ReputationChanged { target, value, .. } => {
                nodes[i].reputation[target.0] = *value;
                let now_below = below(&nodes[i].reputation, &honest);
                match (converged[i], now_below) {
                    (None, true) => converged[i] = Some(*t),
                    (Some(_), false) => converged[i] = None,
                    _ => {}
                }
            }
            NodeEvent::Blame { target, round, rule } => {
                blames.push(BlameRecord { t: *t, by: *node, target: *target, round: *round, rule: *rule });
            }
            NodeEvent::Commit { round, at, leader, .. } => {
                nodes[i].commits.insert(*round, Some((*at, *leader)));
            }
            NodeEvent::Skip { round, .. } => {
                nodes[i].commits.insert(*round, None);
            }
            NodeEvent::Crashed => honest[i] = false,
            _ => {}
        }
    }
    let honest_idx: Vec<usize> = (0..n).filter(|i| honest[*i]).collect();

    // Q(r): the slowest honest validator's entry into r + 1.
    let mut round_latency = vec![];
    let mut prev = SimTime::ZERO;
    for r in 1..=cfg.rounds_target {
        let q = honest_idx.iter().map(|i| nodes[*i].entered.get(&Round(r + 1)).copied()).collect::<Option<Vec<_>>>();
        let Some(q) = q.and_then(|v| v.into_iter().max()) else { break };
        round_latency.push(q.saturating_sub(prev));
        prev = q;
    }
    let round_end = |r: u64| -> Option<SimTime> {
        if r == 0 {
            return Some(SimTime::ZERO);
        }
        let mut t = SimTime::ZERO;
        for l in round_latency.iter().take(r as usize) {
            t = t + *l;
        }
        (r as usize <= round_latency.len()).then_some(t)
    };
    // First round starting at or after `t`.
    let round_after = |t: SimTime| -> u64 {
        (1..=round_latency.len() as u64 + 1).find(|r| round_end(r - 1).is_some_and(|e| e >= t)).unwrap_or(round_latency.len() as u64 + 1)
    };

    let observer = honest_idx.first().map(|i| ValidatorId(*i));
    let mut slots = vec![];
    if let Some(obs) = observer {
        for (round, status) in &nodes[obs.0].commits {
            let leader = ValidatorId((round.0 % n as u64) as usize);
            let latency = status.and_then(|(_, l)| {
                let proposed = created.get(&(*round, l))?;
                let slowest = honest_idx
                    .iter()
                    .filter_map(|i| nodes[*i].commits.get(round).copied().flatten())
                    .map(|(at, _)| at)
                    .max()?;
                Some(slowest.saturating_sub(*proposed))
            });
            slots.push(SlotLatency { round: *round, leader, latency });
        }
    }

    let convergence = if byzantine.is_empty() || cfg.synchronizer != SyncKind::Hybrid {
        Some(SimTime::ZERO)
    } else {
        honest_idx.iter().map(|i| converged[*i]).collect::<Option<Vec<_>>>().map(|v| v.into_iter().max().unwrap_or(SimTime::ZERO))
    };
    let warm = cfg.metrics.warmup_rounds + 1;
    let steady_from = match convergence {
        Some(t) => warm.max(round_after(t)),
        None => cfg.rounds_target + 1,
    };

    let mut committed_authors = vec![0u64; n];
    if let Some(obs) = observer {
        for (_, leader) in nodes[obs.0].commits.values().flatten() {
            committed_authors[leader.0] += 1;
        }
    }

    let hoard = hoarder.and_then(|(h, q)| {
        let dump_time = dump_time?;
        live_entries += live_classified.iter().filter(|(v, r, a)| honest[v.0] && *a == h && r.0 <= q).count() as u64;
        let first_post_dump_round = round_after(dump_time);
        let dump_round = nodes[h.0].entered.iter().filter(|(_, t)| **t <= dump_time).map(|(r, _)| r.0).max().unwrap_or(0);
        let parity_round = observer.and_then(|obs| parity(&nodes[obs.0].commits, n, &honest, dump_round, cfg.metrics.recovery_rounds));
        Some(HoardReport { author: h, dump_time, live_entries, first_post_dump_round, parity_round, dump_round })
    });

    MetricsReport {
        scenario_id: cfg.scenario_id.clone(),
        seed: cfg.seed,
        synchronizer: cfg.synchronizer,
        n,
        f: cfg.f.unwrap_or_default(),
        delta: cfg.delta(),
        rounds_target: cfg.rounds_target,
        warmup_rounds: cfg.metrics.warmup_rounds,
        recovery_rounds: cfg.metrics.recovery_rounds,
        honest,
        round_latency,
        slots,
        steady_from,
        pulls,
        blames,
        reputation: observer.map(|o| std::mem::take(&mut nodes[o.0].reputation_rounds)).unwrap_or_default(),
        committed_authors,
        observer,
        hoard,
    }
}

/// Last round of the first window, ending after `from`, in which every
/// author's committed-slot count reaches the median over honest authors.
fn parity(
    commits: &BTreeMap<Round, Option<(SimTime, ValidatorId)>>,
    n: usize,
    honest: &[bool],
    from: u64,
    recovery: u64,
) -> Option<u64> {
    let window = recovery.max(n as u64);
    let last = commits.keys().next_back()?.0;
    (from.max(window)..=last).find(|end| {
        let mut counts = vec![0u64; n];
        for r in end + 1 - window..=*end {
            if let Some(Some((_, l))) = commits.get(&Round(r)) {
                counts[l.0] += 1;
            }
        }
        let mut h: Vec<u64> = (0..n).filter(|i| honest[*i]).map(|i| counts[i]).collect();
        h.sort_unstable();
        let median = h.get(h.len() / 2).copied().unwrap_or(0);
        median > 0 && counts.iter().all(|c| *c >= median)
    })
}
