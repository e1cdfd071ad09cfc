// SPDX-License-Identifier: Apache-2.0

//! The hybrid synchronizer: admission-controlled push with implicit
//! availability proofs and live/bulk pulls.

use std::sync::Arc;

use crate::{
    block::{validate_block, Block},
    config::ProtocolConfig,
    dag::{AcceptEvent, AcceptKind, AcceptanceRule, DagState, Scope},
    messages::{Message, PullMode, PullRequest, PullResponse, Wanted},
    pull::{classify_incoming, promote, serve, BulkPuller, LivePuller, Promotion},
    push::{create_block, try_advance_round, update_score_with_watermarks, BlameEvent, BlameLedger, ReputationTable},
    sync::{Ctx, NodeEvent, NodeSnapshot, ReputationCause, SyncKind, Synchronizer, TimerTag},
    types::{BlockRef, Round, SimTime, ValidatorId},
};

pub struct HybridSync {
    cfg: ProtocolConfig,
    me: ValidatorId,
    dag: DagState,
    round: Round,
    rep: ReputationTable,
    blame: BlameLedger,
    live: LivePuller,
    bulk: BulkPuller,
    live_timer: Option<SimTime>,
}

impl HybridSync {
    pub fn new(cfg: ProtocolConfig, me: ValidatorId) -> Self {
        let rep = ReputationTable::new(cfg.initial_reputation.clone());
        let dag = DagState::for_config(&cfg, AcceptanceRule::ImplicitPoa);
        HybridSync {
            cfg,
            me,
            dag,
            round: Round::GENESIS,
            rep,
            blame: BlameLedger::default(),
            live: LivePuller::default(),
            bulk: BulkPuller::default(),
            live_timer: None,
        }
    }

    pub fn dag(&self) -> &DagState {
        &self.dag
    }

    pub fn reputation(&self) -> &ReputationTable {
        &self.rep
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
        let block = b.reference();
        let Ok((class, events)) = classify_incoming(&mut self.dag, b, self.round) else {
            return;
        };
        ctx.emit(NodeEvent::Classified { block, class });
        self.report_accepts(events, ctx);
        ctx.request_wake();
    }

    fn report_blame(&self, ev: BlameEvent, ctx: &mut Ctx<'_>) {
        ctx.emit(NodeEvent::Blame { target: ev.target, round: ev.round, rule: ev.rule });
        ctx.emit(NodeEvent::ReputationChanged {
            target: ev.target,
            delta: -self.cfg.reputation_penalty,
            value: ev.score,
            cause: ReputationCause::Blame,
        });
    }

    fn own_pull(&mut self, author: ValidatorId, round: Round, ctx: &mut Ctx<'_>) {
        if let Some(ev) = self.blame.record_pull_report(self.me, author, round, self.me, &mut self.rep, &self.cfg) {
            self.report_blame(ev, ctx);
        }
    }

    /// Advances the threshold clock as far as possible, proposing a block
    /// for every round entered.
    fn progress(&mut self, ctx: &mut Ctx<'_>) {
        while let Some(next) = try_advance_round(&self.dag, self.round, &self.cfg) {
            let prev = self.round;
            self.round = next;
            ctx.emit(NodeEvent::RoundEntered { round: next });
            promote(&mut self.dag, Promotion::RoundAdvanced(next));
            let quorum = self.dag.accepted_at(prev);
            for (target, value) in update_score_with_watermarks(&mut self.rep, prev, &quorum, &self.cfg) {
                ctx.emit(NodeEvent::ReputationChanged { target, delta: 1, value, cause: ReputationCause::Watermark });
            }
            if next.0 <= self.cfg.max_round {
                self.propose(next, ctx);
            }
        }
        self.dag.prune_bulk();
        self.flush_pulls(ctx);
    }

    fn propose(&mut self, r: Round, ctx: &mut Ctx<'_>) {
        let candidates = self.dag.latest_received_upto(Round(r.0 - 1));
        let Ok(block) = create_block(r, self.me, &candidates, &self.rep, &self.dag, &self.cfg) else {
            return;
        };
        let block = Arc::new(block);
        ctx.emit(NodeEvent::BlockCreated {
            block: block.reference(),
            parents: block.parents.len(),
            weak_links: block.weaklinks.len(),
        });
        if let Ok((_, events)) = classify_incoming(&mut self.dag, block.clone(), r) {
            self.report_accepts(events, ctx);
        }
        ctx.broadcast(Message::Block(block));
    }

    fn flush_pulls(&mut self, ctx: &mut Ctx<'_>) {
        let live_missing = self.dag.missing_ancestors(Scope::Live);
        let due = self.live.flush(&live_missing, ctx.now, self.cfg.live_retry_timeout);
        if !due.is_empty() {
            for (a, q) in &due {
                self.own_pull(*a, *q, ctx);
            }
            let wanted: Vec<_> = due.iter().map(|(a, q)| Wanted::Slot(*a, *q)).collect();
            let targets: Vec<_> = ctx.peers().collect();
            for t in &targets {
                ctx.send(*t, Message::PullRequest(PullRequest { mode: PullMode::Live, wanted: wanted.clone() }));
            }
            ctx.emit(NodeEvent::PullIssued { mode: PullMode::Live, targets, entries: wanted, signers: None });
        }
        if let Some(at) = self.live.next_due(self.cfg.live_retry_timeout) {
            if self.live_timer.is_none_or(|t| t > at) {
                self.live_timer = Some(at);
                ctx.after(at.saturating_sub(ctx.now), TimerTag::LiveRetry);
            }
        }

        let bulk_missing = self.dag.missing_ancestors(Scope::Bulk);
        for ((a, q), target) in self.bulk.flush(&bulk_missing, ctx.rng, self.me, self.cfg.n) {
            self.own_pull(a, q, ctx);
            self.send_bulk(a, q, target, ctx);
        }
    }

    fn send_bulk(&mut self, a: ValidatorId, q: Round, target: ValidatorId, ctx: &mut Ctx<'_>) {
        let wanted = vec![Wanted::Slot(a, q)];
        ctx.send(target, Message::PullRequest(PullRequest { mode: PullMode::Bulk, wanted: wanted.clone() }));
        ctx.emit(NodeEvent::PullIssued { mode: PullMode::Bulk, targets: vec![target], entries: wanted, signers: None });
        ctx.after(self.cfg.bulk_retry_timeout, TimerTag::BulkRetry(a, q));
    }
}

impl Synchronizer for HybridSync {
    fn kind(&self) -> SyncKind {
        SyncKind::Hybrid
    }

    fn start(&mut self, ctx: &mut Ctx<'_>) {
        let (dag, events) = DagState::with_genesis(self.cfg.n, self.cfg.f, AcceptanceRule::ImplicitPoa);
        self.dag = dag;
        self.report_accepts(events, ctx);
        ctx.emit(NodeEvent::RoundEntered { round: Round::GENESIS });
        ctx.request_wake();
    }

    fn on_block_delivered(&mut self, from: ValidatorId, block: Arc<Block>, ctx: &mut Ctx<'_>) {
        self.ingest(from, block, ctx);
    }

    fn on_pull_request(&mut self, from: ValidatorId, req: PullRequest, ctx: &mut Ctx<'_>) {
        for w in &req.wanted {
            if let Wanted::Slot(a, q) = w {
                if *a != from {
                    if let Some(ev) = self.blame.record_pull_report(self.me, *a, *q, from, &mut self.rep, &self.cfg) {
                        self.report_blame(ev, ctx);
                    }
                }
            }
        }
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
            TimerTag::LiveRetry => {
                if self.live_timer == Some(ctx.now) {
                    self.live_timer = None;
                }
                self.flush_pulls(ctx);
            }
            TimerTag::BulkRetry(a, q) => {
                if self.dag.block_at(a, q).is_some() {
                    self.bulk.resolve(&(a, q));
                } else if let Some(target) = self.bulk.retry((a, q), ctx.rng, self.me, self.cfg.n) {
                    self.send_bulk(a, q, target, ctx);
                }
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
                .collect::<std::collections::BTreeSet<BlockRef>>(),
            reputation: Some(self.rep.scores().to_vec()),
            live: self.dag.live_set().clone(),
            bulk: self.dag.bulk_set().clone(),
            unresolved_pulls: self.live.outstanding() + self.bulk.outstanding(),
        }
    }
}
