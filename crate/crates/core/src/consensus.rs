// SPDX-License-Identifier: Apache-2.0

//! Direct-commit rule over the synchronizer's DAG. A leader block is
//! committed once `2f + 1` blocks two rounds later each link `2f + 1` of
//! the next-round blocks that link the leader.

use std::{
    collections::{BTreeMap, BTreeSet},
    sync::Arc,
};

use serde::{Deserialize, Serialize};

use crate::{
    block::Block,
    types::{BlockDigest, Round, SimTime, ValidatorId},
};

/// Round-robin leaders, one per round from round 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderSchedule {
    pub n: usize,
}

impl LeaderSchedule {
    pub fn leader(&self, r: Round) -> ValidatorId {
        ValidatorId((r.0 % self.n as u64) as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderSlot {
    pub round: Round,
    pub leader: ValidatorId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CommitStatus {
    Committed { digest: BlockDigest, commit_time: SimTime },
    Skipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub slot: LeaderSlot,
    pub status: CommitStatus,
    pub position: u64,
}

impl CommitRecord {
    /// The committed leader block, if any.
    pub fn digest(&self) -> Option<BlockDigest> {
        match self.status {
            CommitStatus::Committed { digest, .. } => Some(digest),
            CommitStatus::Skipped => None,
        }
    }
}

pub struct Committer {
    schedule: LeaderSchedule,
    quorum: usize,
    last_slot: Round,
    blocks: BTreeMap<Round, BTreeMap<ValidatorId, Arc<Block>>>,
    satisfied: BTreeMap<Round, (BlockDigest, SimTime)>,
    timed_out: BTreeSet<Round>,
    next: Round,
    decided: Vec<CommitRecord>,
}

impl Committer {
    /// Slots run from round 1 to `last_slot` inclusive.
    pub fn new(n: usize, f: usize, last_slot: Round) -> Self {
        Committer {
            schedule: LeaderSchedule { n },
            quorum: 2 * f + 1,
            last_slot,
            blocks: BTreeMap::new(),
            satisfied: BTreeMap::new(),
            timed_out: BTreeSet::new(),
            next: Round(1),
            decided: vec![],
        }
    }

    pub fn schedule(&self) -> LeaderSchedule {
        self.schedule
    }

    pub fn last_slot(&self) -> Round {
        self.last_slot
    }

    pub fn decided(&self) -> &[CommitRecord] {
        &self.decided
    }

    fn leader_block(&self, r: Round) -> Option<&Arc<Block>> {
        self.blocks.get(&r)?.get(&self.schedule.leader(r))
    }

    /// Next-round blocks linking `d` (a block of round `r`).
    fn voters(&self, r: Round, d: &BlockDigest) -> BTreeSet<BlockDigest> {
        self.blocks
            .get(&r.next())
            .into_iter()
            .flat_map(|m| m.values())
            .filter(|b| b.links().any(|l| l.digest == *d))
            .map(|b| b.digest())
            .collect()
    }

    /// True iff `2f + 1` distinct-author blocks of the next round link `d`.
    pub fn detect_rbc_pattern(&self, r: Round, d: &BlockDigest) -> bool {
        self.voters(r, d).len() >= self.quorum
    }

    fn rule_holds(&self, r: Round) -> Option<BlockDigest> {
        let leader = self.leader_block(r)?;
        let voters = self.voters(r, &leader.digest());
        if voters.len() < self.quorum {
            return None;
        }
        let deciders = self
            .blocks
            .get(&Round(r.0 + 2))?
            .values()
            .filter(|b| b.links().filter(|l| voters.contains(&l.digest)).count() >= self.quorum)
            .count();
        (deciders >= self.quorum).then(|| leader.digest())
    }

    /// Feeds a block that is now accepted and stored; returns newly decided
    /// slots in order.
    pub fn on_block(&mut self, b: Arc<Block>, now: SimTime) -> Vec<CommitRecord> {
        let r = b.round;
        let fresh = {
            let row = self.blocks.entry(r).or_default();
            if let std::collections::btree_map::Entry::Vacant(e) = row.entry(b.author) {
                e.insert(b);
                true
            } else {
                false
            }
        };
        if !fresh {
            return vec![];
        }
        for slot in [r.0.checked_sub(2), r.0.checked_sub(1), Some(r.0)].into_iter().flatten() {
            let slot = Round(slot);
            if slot.0 == 0 || slot > self.last_slot || self.satisfied.contains_key(&slot) {
                continue;
            }
            if let Some(d) = self.rule_holds(slot) {
                self.satisfied.insert(slot, (d, now));
            }
        }
        self.decide()
    }

    /// The leader timeout of slot `r` fired.
    pub fn on_timeout(&mut self, r: Round) -> Vec<CommitRecord> {
        if !self.satisfied.contains_key(&r) {
            self.timed_out.insert(r);
        }
        self.decide()
    }

    fn decide(&mut self) -> Vec<CommitRecord> {
        let mut out = vec![];
        while self.next <= self.last_slot {
            let slot = LeaderSlot { round: self.next, leader: self.schedule.leader(self.next) };
            let status = if let Some((digest, commit_time)) = self.satisfied.get(&self.next) {
                CommitStatus::Committed { digest: *digest, commit_time: *commit_time }
            } else if self.timed_out.contains(&self.next) {
                CommitStatus::Skipped
            } else {
                break;
            };
            let rec = CommitRecord { slot, status, position: self.decided.len() as u64 };
            self.decided.push(rec);
            out.push(rec);
            self.next = self.next.next();
        }
        out
    }
}
