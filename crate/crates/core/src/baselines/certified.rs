// SPDX-License-Identifier: Apache-2.0

//! Certified DAG synchronizer. A block is broadcast, peers that hold its
//! parents answer with a signature, and the creator broadcasts a
//! certificate of `2f + 1` signatures. A certificate is acceptance; the
//! block is stored once held, and missing blocks are pulled from the
//! certificate's signers.

use std::{
    collections::{BTreeMap, BTreeSet},
    sync::Arc,
};

use crate::{
    block::{validate_block, Block},
    config::ProtocolConfig,
    messages::{Certificate, Message, PullMode, PullRequest, PullResponse, Wanted},
    sync::{Ctx, NodeEvent, NodeSnapshot, SyncKind, Synchronizer, TimerTag},
    types::{BlockDigest, BlockRef, Round, ValidatorId},
};

pub struct CertifiedSync {
    cfg: ProtocolConfig,
    me: ValidatorId,
    round: Round,
    held: BTreeMap<BlockDigest, Arc<Block>>,
    certs: BTreeMap<BlockDigest, Certificate>,
    certified_by_round: BTreeMap<Round, BTreeMap<ValidatorId, BlockRef>>,
    stored: BTreeSet<BlockDigest>,
    /// Signatures collected for own blocks.
    votes: BTreeMap<BlockDigest, BTreeSet<ValidatorId>>,
    signed: BTreeSet<(ValidatorId, Round)>,
    /// Held blocks this validator will sign once their parents are stored.
    unsigned: BTreeSet<BlockDigest>,
    /// Blocks being pulled and the signers asked.
    pulling: BTreeMap<BlockDigest, BTreeSet<ValidatorId>>,
}

impl CertifiedSync {
    pub fn new(cfg: ProtocolConfig, me: ValidatorId) -> Self {
        CertifiedSync {
            cfg,
            me,
            round: Round::GENESIS,
            held: BTreeMap::new(),
            certs: BTreeMap::new(),
            certified_by_round: BTreeMap::new(),
            stored: BTreeSet::new(),
            votes: BTreeMap::new(),
            signed: BTreeSet::new(),
            unsigned: BTreeSet::new(),
            pulling: BTreeMap::new(),
        }
    }

    pub fn certificate(&self, d: &BlockDigest) -> Option<&Certificate> {
        self.certs.get(d)
    }

    pub fn is_stored(&self, d: &BlockDigest) -> bool {
        self.stored.contains(d)
    }

    fn valid_certificate(&self, c: &Certificate) -> bool {
        c.signers.len() >= self.cfg.quorum() && c.signers.iter().all(|s| s.0 < self.cfg.n)
    }

    fn accept_certificate(&mut self, cert: Certificate, ctx: &mut Ctx<'_>) {
        let d = cert.block.digest;
        if self.certs.contains_key(&d) || !self.valid_certificate(&cert) {
            return;
        }
        let block = cert.block;
        self.certified_by_round.entry(block.round).or_default().entry(block.author).or_insert(block);
        let signers = cert.signers.clone();
        self.certs.insert(d, cert);
        ctx.emit(NodeEvent::BlockAccepted { block });
        if self.held.contains_key(&d) {
            self.store(d, ctx);
        } else {
            self.pull_from(d, signers, ctx);
        }
        ctx.request_wake();
    }

    fn store(&mut self, d: BlockDigest, ctx: &mut Ctx<'_>) {
        if !self.stored.insert(d) {
            return;
        }
        self.pulling.remove(&d);
        let b = self.held[&d].clone();
        ctx.emit(NodeEvent::BlockStored { block: b.reference() });
        ctx.deliver(b.clone());
        // Signers of this block stored its parents before signing.
        let signers = self.certs[&d].signers.clone();
        for p in &b.parents {
            if !self.certs.contains_key(&p.digest) {
                self.pull_from(p.digest, signers.clone(), ctx);
            }
        }
        self.sign_ready(ctx);
    }

    /// Deterministic pull: one request to every signer.
    fn pull_from(&mut self, d: BlockDigest, signers: BTreeSet<ValidatorId>, ctx: &mut Ctx<'_>) {
        if self.pulling.contains_key(&d) || signers.iter().all(|s| *s == self.me) {
            return;
        }
        self.pulling.insert(d, signers);
        self.send_pull(d, ctx);
    }

    fn send_pull(&mut self, d: BlockDigest, ctx: &mut Ctx<'_>) {
        let set = &self.pulling[&d];
        let signers = Some(set.len());
        let targets: Vec<_> = set.iter().copied().filter(|s| *s != self.me).collect();
        let wanted = vec![Wanted::Digest(d)];
        for t in &targets {
            ctx.send(*t, Message::PullRequest(PullRequest { mode: PullMode::Signers, wanted: wanted.clone() }));
        }
        ctx.emit(NodeEvent::PullIssued { mode: PullMode::Signers, targets, entries: wanted, signers });
        ctx.after(self.cfg.live_retry_timeout, TimerTag::SignerPullRetry(d));
    }

    fn can_sign(&self, b: &Block) -> bool {
        b.parents.iter().all(|p| self.stored.contains(&p.digest))
    }

    fn sign_ready(&mut self, ctx: &mut Ctx<'_>) {
        let ready: Vec<_> =
            self.unsigned.iter().filter(|d| self.can_sign(&self.held[*d])).copied().collect();
        for d in ready {
            self.unsigned.remove(&d);
            let b = self.held[&d].clone();
            if self.signed.insert((b.author, b.round)) {
                ctx.send(b.author, Message::Signature { block: b.reference(), signer: self.me });
            }
        }
    }

    fn hold(&mut self, from: ValidatorId, b: Arc<Block>, ctx: &mut Ctx<'_>) -> Option<BlockDigest> {
        if let Err(e) = validate_block(&b, &self.cfg) {
            ctx.emit(NodeEvent::DroppedInvalid { from, reason: e.to_string() });
            return None;
        }
        let d = b.digest();
        if self.held.contains_key(&d) {
            return None;
        }
        self.held.insert(d, b);
        Some(d)
    }

    fn progress(&mut self, ctx: &mut Ctx<'_>) {
        loop {
            let quorum = self.certified_by_round.get(&self.round).map_or(0, BTreeMap::len);
            let own = self.certified_by_round.get(&self.round).and_then(|m| m.get(&self.me)).copied();
            if quorum < self.cfg.quorum() || own.is_none() {
                return;
            }
            self.round = self.round.next();
            ctx.emit(NodeEvent::RoundEntered { round: self.round });
            if self.round.0 <= self.cfg.max_round {
                self.propose(ctx);
            }
        }
    }

    fn propose(&mut self, ctx: &mut Ctx<'_>) {
        let prev = Round(self.round.0 - 1);
        let parents: Vec<BlockRef> = self.certified_by_round[&prev].values().copied().collect();
        // Only parent rounds are tracked here; the array is not used.
        let mut ancestors = vec![None; self.cfg.n];
        for p in &parents {
            ancestors[p.author.0] = Some(p.round);
        }
        let block = Arc::new(Block::new(self.round, self.me, parents, vec![], vec![None; self.cfg.n], ancestors, vec![]));
        let d = block.digest();
        ctx.emit(NodeEvent::BlockCreated { block: block.reference(), parents: block.parents.len(), weak_links: 0 });
        self.held.insert(d, block.clone());
        self.signed.insert((self.me, self.round));
        self.votes.insert(d, BTreeSet::from([self.me]));
        ctx.broadcast(Message::Block(block));
    }
}

impl Synchronizer for CertifiedSync {
    fn kind(&self) -> SyncKind {
        SyncKind::Certified
    }

    fn start(&mut self, ctx: &mut Ctx<'_>) {
        let everyone: BTreeSet<_> = ValidatorId::all(self.cfg.n).collect();
        for a in ValidatorId::all(self.cfg.n) {
            let g = Arc::new(Block::genesis(a, self.cfg.n));
            self.held.insert(g.digest(), g.clone());
            self.accept_certificate(Certificate { block: g.reference(), signers: everyone.clone() }, ctx);
        }
        ctx.emit(NodeEvent::RoundEntered { round: Round::GENESIS });
        ctx.request_wake();
    }

    fn on_block_delivered(&mut self, from: ValidatorId, block: Arc<Block>, ctx: &mut Ctx<'_>) {
        let Some(d) = self.hold(from, block, ctx) else { return };
        if self.certs.contains_key(&d) {
            self.store(d, ctx);
        } else if from == self.held[&d].author {
            self.unsigned.insert(d);
            self.sign_ready(ctx);
        }
        ctx.request_wake();
    }

    fn on_signature(&mut self, from: ValidatorId, block: BlockRef, signer: ValidatorId, ctx: &mut Ctx<'_>) {
        if from != signer || block.author != self.me || self.certs.contains_key(&block.digest) {
            return;
        }
        let Some(votes) = self.votes.get_mut(&block.digest) else { return };
        votes.insert(signer);
        if votes.len() >= self.cfg.quorum() {
            let cert = Certificate { block, signers: votes.clone() };
            ctx.broadcast(Message::Certificate(cert.clone()));
            self.accept_certificate(cert, ctx);
        }
    }

    fn on_certificate(&mut self, _from: ValidatorId, cert: Certificate, ctx: &mut Ctx<'_>) {
        self.accept_certificate(cert, ctx);
    }

    fn on_pull_request(&mut self, from: ValidatorId, req: PullRequest, ctx: &mut Ctx<'_>) {
        let mut resp = PullResponse::default();
        for w in &req.wanted {
            if let Wanted::Digest(d) = w {
                if let (Some(b), Some(c)) = (self.held.get(d), self.certs.get(d)) {
                    resp.blocks.push(b.clone());
                    resp.certificates.push(c.clone());
                }
            }
        }
        if !resp.blocks.is_empty() {
            ctx.send(from, Message::PullResponse(resp));
        }
    }

    fn on_pull_response(&mut self, from: ValidatorId, resp: PullResponse, ctx: &mut Ctx<'_>) {
        for b in resp.blocks {
            self.hold(from, b, ctx);
        }
        for c in resp.certificates {
            if self.held.contains_key(&c.block.digest) {
                self.accept_certificate(c, ctx);
            }
        }
        let ready: Vec<_> =
            self.certs.keys().filter(|d| self.held.contains_key(*d) && !self.stored.contains(*d)).copied().collect();
        for d in ready {
            self.store(d, ctx);
        }
    }

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>) {
        match tag {
            TimerTag::Wake => self.progress(ctx),
            TimerTag::SignerPullRetry(d)
                if self.pulling.contains_key(&d) && !self.held.contains_key(&d) => {
                    self.send_pull(d, ctx);
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
            accepted: self.certs.keys().copied().collect(),
            stored: self.stored.iter().map(|d| (*d, self.held[d].clone())).collect(),
            accepted_refs: self.certs.values().map(|c| c.block).collect(),
            reputation: None,
            live: Default::default(),
            bulk: Default::default(),
            unresolved_pulls: self.pulling.keys().filter(|d| !self.held.contains_key(*d)).count(),
        }
    }
}
