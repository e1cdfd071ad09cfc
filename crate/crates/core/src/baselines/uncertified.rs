// SPDX-License-Identifier: Apache-2.0

//! Best-effort broadcast push with a constant-size random pull. A block is
//! accepted only once its whole causal history is.

use std::{
    collections::{BTreeMap, BTreeSet},
    sync::Arc,
};

use rand::seq::IteratorRandom;

use crate::{
    block::{validate_block, Block},
    config::ProtocolConfig,
    dag::{AcceptEvent, AcceptKind, AcceptanceRule, DagState},
    messages::{Message, PullMode, PullRequest, PullResponse, Wanted},
    pull::serve,
    push::compute_ancestors,
    sync::{Ctx, NodeEvent, NodeSnapshot, SyncKind, Synchronizer, TimerTag},
    types::{BlockDigest, Round, ValidatorId},
};

pub struct UncertifiedSync {
    cfg: ProtocolConfig,
    me: ValidatorId,
    dag: DagState,
    round: Round,
    /// Missing digests being pulled, with the attempt count.
    pulling: BTreeMap<BlockDigest, u32>,
}

/// The round-`r` block: every accepted round `r - 1` block is a parent.
pub fn uncertified_push(dag: &DagState, r: Round, me: ValidatorId, n: usize) -> Option<Block> {
    let parents = dag.accepted_at(Round(r.0 - 1));
    if !parents.iter().any(|b| b.author == me) {
        return None;
    }
    let ancestors = compute_ancestors(parents.iter().map(|b| b.as_ref()), n);
    Some(Block::new(r, me, parents.iter().map(|b| b.reference()).collect(), vec![], vec![None; n], ancestors, vec![]))
}

/// `c` distinct random peers.
pub fn random_targets<R: rand::Rng>(rng: &mut R, me: ValidatorId, n: usize, c: usize) -> Vec<ValidatorId> {
    let mut t = ValidatorId::all(n).filter(|v| *v != me).choose_multiple(rng, c);
    t.sort();
    t
}

impl UncertifiedSync {
    pub fn new(cfg: ProtocolConfig, me: ValidatorId) -> Self {
        let dag = DagState::for_config(&cfg, AcceptanceRule::FullHistory);
        UncertifiedSync { cfg, me, dag, round: Round::GENESIS, pulling: BTreeMap::new() }
    }

    pub fn dag(&self) -> &DagState {
        &self.dag
    }

    fn report_accepts(&self, events: Vec<AcceptEvent>, ctx: &mut Ctx<'_>) {
        for e in events {
            match e.kind {
                AcceptKind::Accept => ctx.emit(NodeEvent::BlockAccepted { block: e.block }),
                AcceptKind::Store => {
                    ctx.emit(NodeEvent::BlockStored { block: e.block });
                    if let Some(b) = self.dag.get(&e.block.digest) {
                        ctx.deliver(b.clone());
                    }
                }
            }
        }
    }

    fn ingest(&mut self, from: ValidatorId, b: Arc<Block>, ctx: &mut Ctx<'_>) {
        if let Err(e) = validate_block(&b, &self.cfg) {
            ctx.emit(NodeEvent::DroppedInvalid { from, reason: e.to_string() });
            return;
        }
        let d = b.digest();
        if self.dag.insert_received(b.clone()).is_err() {
            return;
        }
        self.pulling.remove(&d);
        let events = self.dag.accept_ready();
        self.report_accepts(events, ctx);
        if !self.dag.is_accepted(&d) {
            let missing: Vec<_> =
                b.parents.iter().filter(|p| !self.dag.contains(&p.digest)).map(|p| p.digest).collect();
            for m in missing {
                if let std::collections::btree_map::Entry::Vacant(e) = self.pulling.entry(m) {
                    e.insert(0);
                    self.pull(m, ctx);
                }
            }
        }
        ctx.request_wake();
    }

    fn pull(&mut self, d: BlockDigest, ctx: &mut Ctx<'_>) {
        let Some(attempts) = self.pulling.get_mut(&d) else { return };
        *attempts += 1;
        let targets = random_targets(ctx.rng, self.me, self.cfg.n, self.cfg.random_pull_fanout);
        let wanted = vec![Wanted::Digest(d)];
        for t in &targets {
            ctx.send(*t, Message::PullRequest(PullRequest { mode: PullMode::Random, wanted: wanted.clone() }));
        }
        ctx.emit(NodeEvent::PullIssued { mode: PullMode::Random, targets, entries: wanted, signers: None });
        ctx.after(self.cfg.bulk_retry_timeout, TimerTag::RandomPullRetry(d));
    }

    fn progress(&mut self, ctx: &mut Ctx<'_>) {
        while self.dag.accepted_authors_at(self.round) >= self.cfg.quorum() {
            self.round = self.round.next();
            ctx.emit(NodeEvent::RoundEntered { round: self.round });
            if self.round.0 <= self.cfg.max_round {
                if let Some(block) = uncertified_push(&self.dag, self.round, self.me, self.cfg.n) {
                    let block = Arc::new(block);
                    ctx.emit(NodeEvent::BlockCreated {
                        block: block.reference(),
                        parents: block.parents.len(),
                        weak_links: 0,
                    });
                    self.dag.insert_received(block.clone()).expect("fresh block");
                    let events = self.dag.accept_ready();
                    self.report_accepts(events, ctx);
                    ctx.broadcast(Message::Block(block));
                }
            }
        }
    }
}

impl Synchronizer for UncertifiedSync {
    fn kind(&self) -> SyncKind {
        SyncKind::Uncertified
    }

    fn start(&mut self, ctx: &mut Ctx<'_>) {
        let (dag, events) = DagState::with_genesis(self.cfg.n, self.cfg.f, AcceptanceRule::FullHistory);
        self.dag = dag;
        self.report_accepts(events, ctx);
        ctx.emit(NodeEvent::RoundEntered { round: Round::GENESIS });
        ctx.request_wake();
    }

    fn on_block_delivered(&mut self, from: ValidatorId, block: Arc<Block>, ctx: &mut Ctx<'_>) {
        self.ingest(from, block, ctx);
    }

    fn on_pull_request(&mut self, from: ValidatorId, req: PullRequest, ctx: &mut Ctx<'_>) {
        let blocks = serve(&self.dag, &req.wanted);
        if !blocks.is_empty() {
            ctx.send(from, Message::PullResponse(PullResponse { blocks, certificates: vec![] }));
        }
    }

    fn on_pull_response(&mut self, from: ValidatorId, resp: PullResponse, ctx: &mut Ctx<'_>) {
        for b in resp.blocks {
            self.ingest(from, b, ctx);
        }
    }

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        match tag {
            TimerTag::Wake => self.progress(ctx),
            TimerTag::RandomPullRetry(d)
                if !self.dag.contains(&d) => {
                    self.pull(d, ctx);
                }
            _ => {}
        }
    }

    fn current_round(&self) -> Round {
        self.round
    }

    fn snapshot(&self) -> NodeSnapshot {
        NodeSnapshot {
            round: self.round,
            accepted: self.dag.accepted_digests().copied().collect(),
            stored: self.dag.received_blocks().map(|b| (b.digest(), b.clone())).collect(),
            accepted_refs: self
                .dag
                .accepted_digests()
                .filter_map(|d| self.dag.get(d))
                .map(|b| b.reference())
                .collect::<BTreeSet<_>>(),
            reputation: None,
            live: Default::default(),
            bulk: Default::default(),
            unresolved_pulls: self.pulling.len(),
        }
    }
}
