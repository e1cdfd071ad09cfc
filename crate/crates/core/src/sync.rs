// SPDX-License-Identifier: Apache-2.0

//! The interface shared by every synchronizer, and the per-callback context
//! through which they talk to the network.

use std::{
    collections::{BTreeMap, BTreeSet},
    sync::Arc,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{
    block::Block,
    messages::{Certificate, Message, PullMode, PullRequest, PullResponse, Wanted},
    types::{BlockDigest, BlockRef, Round, SimTime, ValidatorId},
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncKind {
    Hybrid,
    Uncertified,
    Certified,
}

impl SyncKind {
    pub const ALL: [SyncKind; 3] = [SyncKind::Hybrid, SyncKind::Uncertified, SyncKind::Certified];

    pub fn name(self) -> &'static str {
        match self {
            SyncKind::Hybrid => "hybrid",
            SyncKind::Uncertified => "uncertified",
            SyncKind::Certified => "certified",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TimerTag {
    /// Fires after every delivery at the same instant has been ingested.
    Wake,
    LiveRetry,
    BulkRetry(ValidatorId, Round),
    RandomPullRetry(BlockDigest),
    SignerPullRetry(BlockDigest),
    LeaderTimeout(Round),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Send { to: ValidatorId, msg: Message },
    Timer { at: SimTime, tag: TimerTag },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Accepted,
    Live,
    Bulk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlameRule {
    /// The validator itself had to pull the block.
    OwnPull,
    /// `f + 1` distinct peers asked this validator for the block.
    Reports,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReputationCause {
    Watermark,
    Blame,
}

/// Everything a validator does that metrics or property checks care about.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NodeEvent {
    RoundEntered { round: Round },
    BlockCreated { block: BlockRef, parents: usize, weak_links: usize },
    BlockAccepted { block: BlockRef },
    BlockStored { block: BlockRef },
    Classified { block: BlockRef, class: Class },
    /// `signers` is the size of the certificate the targets were taken from.
    PullIssued { mode: PullMode, targets: Vec<ValidatorId>, entries: Vec<Wanted>, signers: Option<usize> },
    ReputationChanged { target: ValidatorId, delta: i64, value: i64, cause: ReputationCause },
    Blame { target: ValidatorId, round: Round, rule: BlameRule },
    /// `at` is when the commit rule was first satisfied locally.
    Commit { round: Round, leader: ValidatorId, digest: BlockDigest, at: SimTime },
    Skip { round: Round, leader: ValidatorId },
    DroppedInvalid { from: ValidatorId, reason: String },
    Crashed,
}

/// Handed to every callback; collects the callback's outputs.
pub struct Ctx<'a> {
    pub now: SimTime,
    pub me: ValidatorId,
    pub n: usize,
    pub rng: &'a mut ChaCha8Rng,
    pub actions: Vec<Action>,
    pub events: Vec<NodeEvent>,
    /// Blocks that became both accepted and stored, in order.
    pub delivered: Vec<Arc<Block>>,
    pub wake: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(now: SimTime, me: ValidatorId, n: usize, rng: &'a mut ChaCha8Rng) -> Self {
        Ctx { now, me, n, rng, actions: vec![], events: vec![], delivered: vec![], wake: false }
    }

    pub fn send(&mut self, to: ValidatorId, msg: Message) {
        debug_assert_ne!(to, self.me);
        self.actions.push(Action::Send { to, msg });
    }

    pub fn broadcast(&mut self, msg: Message) {
        for to in ValidatorId::all(self.n).filter(|v| *v != self.me) {
            self.actions.push(Action::Send { to, msg: msg.clone() });
        }
    }

    pub fn after(&mut self, delay: SimTime, tag: TimerTag) {
        self.actions.push(Action::Timer { at: self.now + delay, tag });
    }

    pub fn emit(&mut self, event: NodeEvent) {
        self.events.push(event);
    }

    pub fn deliver(&mut self, block: Arc<Block>) {
        self.delivered.push(block);
    }

    /// Asks for a [`TimerTag::Wake`] at the current instant.
    pub fn request_wake(&mut self) {
        self.wake = true;
    }

    pub fn peers(&self) -> impl Iterator<Item = ValidatorId> + '_ {
        ValidatorId::all(self.n).filter(move |v| *v != self.me)
    }
}

/// A validator's synchronizer state at some instant, for property checks.
#[derive(Clone, Debug, Default)]
pub struct NodeSnapshot {
    pub round: Round,
    pub accepted: BTreeSet<BlockDigest>,
    /// Blocks held by the validator, accepted or not.
    pub stored: BTreeMap<BlockDigest, Arc<Block>>,
    pub accepted_refs: BTreeSet<BlockRef>,
    pub reputation: Option<Vec<i64>>,
    pub live: BTreeSet<BlockDigest>,
    pub bulk: BTreeSet<BlockDigest>,
    /// Pulls still waiting for an answer.
    pub unresolved_pulls: usize,
}

/// One validator's block synchronizer. All three implementations are
/// driven through this trait by the simulator.
pub trait Synchronizer: Send {
    fn kind(&self) -> SyncKind;

    fn start(&mut self, ctx: &mut Ctx<'_>);

    fn on_block_delivered(&mut self, from: ValidatorId, block: Arc<Block>, ctx: &mut Ctx<'_>);

    fn on_pull_request(&mut self, from: ValidatorId, req: PullRequest, ctx: &mut Ctx<'_>);

    fn on_pull_response(&mut self, from: ValidatorId, resp: PullResponse, ctx: &mut Ctx<'_>);

    fn on_signature(&mut self, _from: ValidatorId, _block: BlockRef, _signer: ValidatorId, _ctx: &mut Ctx<'_>) {}

    fn on_certificate(&mut self, _from: ValidatorId, _cert: Certificate, _ctx: &mut Ctx<'_>) {}

    fn on_timer(&mut self, tag: TimerTag, ctx: &mut Ctx<'_>);

    fn current_round(&self) -> Round;

    fn snapshot(&self) -> NodeSnapshot;

    fn on_message(&mut self, from: ValidatorId, msg: Message, ctx: &mut Ctx<'_>) {
        match msg {
            Message::Block(b) => self.on_block_delivered(from, b, ctx),
            Message::PullRequest(r) => self.on_pull_request(from, r, ctx),
            Message::PullResponse(r) => self.on_pull_response(from, r, ctx),
            Message::Signature { block, signer } => self.on_signature(from, block, signer, ctx),
            Message::Certificate(c) => self.on_certificate(from, c, ctx),
        }
    }
}
