// SPDX-License-Identifier: Apache-2.0

//! A validator's local view of the DAG.
//!
//! Blocks are first *received* (held, validated) and later *accepted*. Under
//! [`AcceptanceRule::ImplicitPoa`] a block is acceptable once each of its
//! strong parents is either accepted or implicitly available, i.e. linked
//! from later rounds by at least `f + 1` distinct authors. Under
//! [`AcceptanceRule::FullHistory`] every parent must be accepted.
//!
//! Accepted blocks whose history is still partly missing, and held blocks of
//! old rounds, sit in the bulk set; held blocks that the threshold clock is
//! waiting on sit in the live set.

use std::{
    collections::{BTreeMap, BTreeSet},
    sync::Arc,
};

use thiserror::Error;

use crate::{
    block::Block,
    config::ProtocolConfig,
    types::{BlockDigest, BlockRef, Round, RoundMark, ValidatorId},
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcceptanceRule {
    ImplicitPoa,
    FullHistory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AcceptKind {
    Accept,
    Store,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AcceptEvent {
    pub kind: AcceptKind,
    pub block: BlockRef,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Live,
    Bulk,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DagError {
    #[error("block {0} already held")]
    DuplicateIgnored(BlockDigest),
    #[error("block {0} is not held")]
    NotReceived(BlockDigest),
    #[error("block {0} has unavailable parents")]
    NotAcceptable(BlockDigest),
}

/// A missing block identified by author and round.
pub type Slot = (ValidatorId, Round);

#[derive(Clone, Debug)]
pub struct DagState {
    n: usize,
    weak_quorum: usize,
    rule: AcceptanceRule,
    received: BTreeMap<BlockDigest, Arc<Block>>,
    /// First block held for each (author, round).
    slots: BTreeMap<Slot, BlockDigest>,
    accepted: BTreeSet<BlockDigest>,
    /// First accepted block per author, by round.
    accepted_by_round: BTreeMap<Round, BTreeMap<ValidatorId, BlockDigest>>,
    accepted_rounds: Vec<BTreeSet<Round>>,
    last_accepted: Vec<RoundMark>,
    pending: BTreeSet<(Round, ValidatorId, BlockDigest)>,
    reverse_refs: BTreeMap<BlockDigest, BTreeSet<BlockRef>>,
    /// Every linked-to block that is not accepted yet.
    unaccepted_refs: BTreeMap<BlockDigest, BlockRef>,
    live: BTreeSet<BlockDigest>,
    bulk: BTreeSet<BlockDigest>,
}

impl DagState {
    pub fn new(n: usize, f: usize, rule: AcceptanceRule) -> Self {
        DagState {
            n,
            weak_quorum: f + 1,
            rule,
            received: BTreeMap::new(),
            slots: BTreeMap::new(),
            accepted: BTreeSet::new(),
            accepted_by_round: BTreeMap::new(),
            accepted_rounds: vec![BTreeSet::new(); n],
            last_accepted: vec![None; n],
            pending: BTreeSet::new(),
            reverse_refs: BTreeMap::new(),
            unaccepted_refs: BTreeMap::new(),
            live: BTreeSet::new(),
            bulk: BTreeSet::new(),
        }
    }

    pub fn for_config(cfg: &ProtocolConfig, rule: AcceptanceRule) -> Self {
        Self::new(cfg.n, cfg.f, rule)
    }

    /// Holds all genesis blocks and accepts them.
    pub fn with_genesis(n: usize, f: usize, rule: AcceptanceRule) -> (Self, Vec<AcceptEvent>) {
        let mut dag = Self::new(n, f, rule);
        for a in ValidatorId::all(n) {
            dag.insert_received(Arc::new(Block::genesis(a, n))).expect("fresh state");
        }
        let events = dag.accept_ready();
        (dag, events)
    }

    pub fn committee_size(&self) -> usize {
        self.n
    }

    /// Indexes `b` and its links. Forward references to unknown digests are
    /// allowed.
    pub fn insert_received(&mut self, b: Arc<Block>) -> Result<(), DagError> {
        let d = b.digest();
        if self.received.contains_key(&d) {
            return Err(DagError::DuplicateIgnored(d));
        }
        let me = b.reference();
        for link in b.links() {
            self.reverse_refs.entry(link.digest).or_default().insert(me);
            if !self.accepted.contains(&link.digest) {
                self.unaccepted_refs.insert(link.digest, *link);
            }
        }
        self.slots.entry((b.author, b.round)).or_insert(d);
        self.pending.insert((b.round, b.author, d));
        self.received.insert(d, b);
        Ok(())
    }

    pub fn get(&self, d: &BlockDigest) -> Option<&Arc<Block>> {
        self.received.get(d)
    }

    pub fn contains(&self, d: &BlockDigest) -> bool {
        self.received.contains_key(d)
    }

    pub fn is_accepted(&self, d: &BlockDigest) -> bool {
        self.accepted.contains(d)
    }

    /// Held block of `author` at `round`, if any.
    pub fn block_at(&self, author: ValidatorId, round: Round) -> Option<&Arc<Block>> {
        self.slots.get(&(author, round)).and_then(|d| self.received.get(d))
    }

    /// Accepted block of `author` at `round`, if any.
    pub fn accepted_block_at(&self, author: ValidatorId, round: Round) -> Option<&Arc<Block>> {
        self.accepted_by_round
            .get(&round)
            .and_then(|m| m.get(&author))
            .and_then(|d| self.received.get(d))
    }

    pub fn referencers(&self, d: &BlockDigest) -> impl Iterator<Item = &BlockRef> {
        self.reverse_refs.get(d).into_iter().flatten()
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.len()
    }

    pub fn accepted_digests(&self) -> impl Iterator<Item = &BlockDigest> {
        self.accepted.iter()
    }

    pub fn received_blocks(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.received.values()
    }

    /// Number of distinct authors with an accepted block at `round`.
    pub fn accepted_authors_at(&self, round: Round) -> usize {
        self.accepted_by_round.get(&round).map_or(0, BTreeMap::len)
    }

    /// Accepted blocks of `round`, one per author, in author order.
    pub fn accepted_at(&self, round: Round) -> Vec<Arc<Block>> {
        self.accepted_by_round
            .get(&round)
            .into_iter()
            .flat_map(|m| m.values())
            .map(|d| self.received[d].clone())
            .collect()
    }

    /// Highest round `r` such that every block of `author` up to `r` is
    /// accepted.
    pub fn last_accepted(&self, author: ValidatorId) -> RoundMark {
        self.last_accepted[author.0]
    }

    pub fn max_accepted(&self, author: ValidatorId) -> RoundMark {
        self.accepted_rounds[author.0].iter().next_back().copied()
    }

    /// Latest held block of every author with round at most `max_round`.
    pub fn latest_received_upto(&self, max_round: Round) -> Vec<Arc<Block>> {
        ValidatorId::all(self.n)
            .filter_map(|a| {
                self.slots
                    .range((a, Round(0))..=(a, max_round))
                    .next_back()
                    .map(|(_, d)| self.received[d].clone())
            })
            .collect()
    }

    /// True iff `d` is linked from blocks of at least `f + 1` distinct
    /// authors in later rounds.
    pub fn implicit_poa(&self, d: &BlockDigest) -> bool {
        let Some(target_round) = self
            .received
            .get(d)
            .map(|b| b.round)
            .or_else(|| self.unaccepted_refs.get(d).map(|r| r.round))
        else {
            return false;
        };
        let authors: BTreeSet<_> = self
            .referencers(d)
            .filter(|r| r.round > target_round)
            .map(|r| r.author)
            .collect();
        authors.len() >= self.weak_quorum
    }

    pub fn is_acceptable(&self, b: &Block) -> bool {
        b.parents.iter().all(|p| {
            self.accepted.contains(&p.digest)
                || (self.rule == AcceptanceRule::ImplicitPoa && self.implicit_poa(&p.digest))
        })
    }

    /// Accepts `d` and then every held block that became acceptable, in
    /// (round, author) order. Accepting an accepted block is a no-op.
    pub fn accept(&mut self, d: &BlockDigest) -> Result<Vec<AcceptEvent>, DagError> {
        let b = self.received.get(d).ok_or(DagError::NotReceived(*d))?.clone();
        if self.accepted.contains(d) {
            return Ok(vec![]);
        }
        if !self.is_acceptable(&b) {
            return Err(DagError::NotAcceptable(*d));
        }
        let mut events = Vec::new();
        self.mark_accepted(&b, &mut events);
        events.extend(self.accept_ready());
        Ok(events)
    }

    /// Accepts every held block that is acceptable, to a fixed point.
    pub fn accept_ready(&mut self) -> Vec<AcceptEvent> {
        let mut events = Vec::new();
        loop {
            let ready: Vec<_> = self
                .pending
                .iter()
                .filter(|(_, _, d)| self.is_acceptable(&self.received[d]))
                .map(|(_, _, d)| *d)
                .collect();
            if ready.is_empty() {
                return events;
            }
            for d in ready {
                let b = self.received[&d].clone();
                // Earlier blocks of this pass may have made later ones
                // acceptable already; nothing ever becomes unacceptable.
                self.mark_accepted(&b, &mut events);
            }
        }
    }

    fn mark_accepted(&mut self, b: &Arc<Block>, events: &mut Vec<AcceptEvent>) {
        let d = b.digest();
        if !self.accepted.insert(d) {
            return;
        }
        self.pending.remove(&(b.round, b.author, d));
        self.unaccepted_refs.remove(&d);
        self.accepted_by_round.entry(b.round).or_default().entry(b.author).or_insert(d);
        let rounds = &mut self.accepted_rounds[b.author.0];
        rounds.insert(b.round);
        let mut last = self.last_accepted[b.author.0];
        loop {
            let next = last.map_or(Round(0), Round::next);
            if rounds.contains(&next) {
                last = Some(next);
            } else {
                break;
            }
        }
        self.last_accepted[b.author.0] = last;
        // Accepted with part of its history still missing: complete it in
        // the background.
        let incomplete = b.links().any(|l| !self.accepted.contains(&l.digest));
        if self.live.remove(&d) || incomplete {
            self.bulk.insert(d);
        }
        events.push(AcceptEvent { kind: AcceptKind::Accept, block: b.reference() });
        events.push(AcceptEvent { kind: AcceptKind::Store, block: b.reference() });
    }

    pub fn live_set(&self) -> &BTreeSet<BlockDigest> {
        &self.live
    }

    pub fn bulk_set(&self) -> &BTreeSet<BlockDigest> {
        &self.bulk
    }

    pub fn add_live(&mut self, d: BlockDigest) {
        if !self.bulk.contains(&d) {
            self.live.insert(d);
        }
    }

    pub fn add_bulk(&mut self, d: BlockDigest) {
        self.live.remove(&d);
        self.bulk.insert(d);
    }

    /// Moves live blocks with round below `round` to the bulk set.
    pub fn demote_live_below(&mut self, round: Round) -> Vec<BlockDigest> {
        let moved: Vec<_> = self
            .live
            .iter()
            .filter(|d| self.received[*d].round < round)
            .copied()
            .collect();
        for d in &moved {
            self.add_bulk(*d);
        }
        moved
    }

    /// Highest round of each author that the block's links and ancestors
    /// array claim to be reachable.
    fn reach(&self, b: &Block) -> Vec<RoundMark> {
        let mut reach = b.ancestors.clone();
        for l in b.links() {
            let slot = &mut reach[l.author.0];
            *slot = (*slot).max(Some(l.round));
        }
        reach
    }

    fn held(&self, slot: &Slot) -> bool {
        self.slots.contains_key(slot)
    }

    /// Per-author coverage from accepted blocks and implicitly available
    /// links: rounds at or below it will be completed in the background.
    fn available_upto(&self) -> Vec<RoundMark> {
        let mut cover: Vec<RoundMark> = ValidatorId::all(self.n).map(|a| self.max_accepted(a)).collect();
        for r in self.unaccepted_refs.values() {
            if cover[r.author.0] < Some(r.round) && self.implicit_poa(&r.digest) {
                cover[r.author.0] = Some(r.round);
            }
        }
        cover
    }

    /// Blocks that must be fetched, by (author, round).
    ///
    /// `Live`: missing history of live blocks that is not already proven
    /// available. `Bulk`: missing history of bulk blocks, minus the live
    /// entries.
    pub fn missing_ancestors(&self, scope: Scope) -> BTreeSet<Slot> {
        let live = self.live_missing();
        match scope {
            Scope::Live => live,
            Scope::Bulk => {
                let mut out = BTreeSet::new();
                for d in &self.bulk {
                    let b = &self.received[d];
                    let reach = self.reach(b);
                    for a in ValidatorId::all(self.n) {
                        self.collect_range(a, self.last_accepted[a.0], reach[a.0], &mut out);
                    }
                }
                out.retain(|s| !live.contains(s));
                out
            }
        }
    }

    fn live_missing(&self) -> BTreeSet<Slot> {
        let mut out = BTreeSet::new();
        if self.live.is_empty() {
            return out;
        }
        let cover = self.available_upto();
        for d in &self.live {
            let b = &self.received[d];
            let reach = self.reach(b);
            for a in ValidatorId::all(self.n) {
                self.collect_range(a, cover[a.0], reach[a.0], &mut out);
            }
            for p in &b.parents {
                if !self.accepted.contains(&p.digest)
                    && !self.received.contains_key(&p.digest)
                    && !self.implicit_poa(&p.digest)
                {
                    out.insert((p.author, p.round));
                }
            }
        }
        out
    }

    fn collect_range(&self, a: ValidatorId, above: RoundMark, upto: RoundMark, out: &mut BTreeSet<Slot>) {
        let Some(upto) = upto else { return };
        let from = above.map_or(0, |r| r.0 + 1);
        for q in from..=upto.0 {
            let slot = (a, Round(q));
            if !self.held(&slot) {
                out.insert(slot);
            }
        }
    }

    /// Drops accepted bulk blocks whose whole history is accepted.
    pub fn prune_bulk(&mut self) {
        let done: Vec<_> = self
            .bulk
            .iter()
            .filter(|d| {
                let b = &self.received[*d];
                self.accepted.contains(*d)
                    && self.reach(b).iter().zip(&self.last_accepted).all(|(r, l)| r <= l)
            })
            .copied()
            .collect();
        for d in done {
            self.bulk.remove(&d);
        }
    }

    /// Whether every link of every accepted block is accepted.
    pub fn history_complete(&self) -> bool {
        self.accepted
            .iter()
            .all(|d| self.received[d].links().all(|l| self.accepted.contains(&l.digest)))
    }
}
