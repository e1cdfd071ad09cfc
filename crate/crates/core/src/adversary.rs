// SPDX-License-Identifier: Apache-2.0

//! Byzantine behaviours. A faulty validator runs the ordinary synchronizer;
//! its policy only decides what happens to the blocks it broadcasts.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{
    block::Block,
    types::{Round, SimTime, ValidatorId},
};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryPolicy {
    #[default]
    Honest,
    /// Sends each own block to a rotating subset of honest validators.
    PullInduction {
        /// Receivers in order, one step per round. Empty means every other
        /// validator by index.
        #[serde(default)]
        rotation: Vec<ValidatorId>,
        /// Receivers per round, taken consecutively from the rotation.
        #[serde(default = "one")]
        share_with: usize,
        /// Everyone else gets the block this much later; never if absent.
        #[serde(default)]
        delay: Option<SimTime>,
        /// Receivers get the block this much after creation.
        #[serde(default)]
        hold: Option<SimTime>,
        /// Receivers get the round-`r` block only once some other validator
        /// is seen linking the round-`r - 1` one.
        #[serde(default = "yes")]
        paced: bool,
    },
    /// Creates blocks silently and broadcasts the backlog at `hoard_rounds`.
    HoardAndDump { hoard_rounds: u64 },
    /// Stops sending and responding on entering `at_round`.
    Crash { at_round: Round },
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// What to do with one copy of an own block bound for one receiver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Disposition {
    Send,
    Delay(SimTime),
    Drop,
    Hoard,
    /// Held until an outside block links `b.round - 1` of the sender.
    Paced,
}

impl AdversaryPolicy {
    pub fn pull_induction() -> Self {
        AdversaryPolicy::PullInduction { rotation: vec![], share_with: 1, delay: None, hold: None, paced: true }
    }

    pub fn is_honest(&self) -> bool {
        matches!(self, AdversaryPolicy::Honest)
    }

    pub fn is_byzantine(&self) -> bool {
        matches!(self, AdversaryPolicy::PullInduction { .. } | AdversaryPolicy::HoardAndDump { .. })
    }

    pub fn crash_round(&self) -> Option<Round> {
        match self {
            AdversaryPolicy::Crash { at_round } => Some(*at_round),
            _ => None,
        }
    }

    /// Receivers of `me`'s round-`r` block under pull induction.
    pub fn pull_induction_targets(&self, me: ValidatorId, r: Round, n: usize) -> BTreeSet<ValidatorId> {
        match self {
            AdversaryPolicy::PullInduction { rotation, share_with, .. } => {
                let default: Vec<_>;
                let order = if rotation.is_empty() {
                    default = ValidatorId::all(n).filter(|v| *v != me).collect();
                    &default
                } else {
                    rotation
                };
                if order.is_empty() {
                    return BTreeSet::new();
                }
                let start = (r.0.saturating_sub(1) as usize) % order.len();
                (0..(*share_with).min(order.len())).map(|k| order[(start + k) % order.len()]).collect()
            }
            AdversaryPolicy::HoardAndDump { .. } | AdversaryPolicy::Crash { .. } | AdversaryPolicy::Honest => {
                ValidatorId::all(n).filter(|v| *v != me).collect()
            }
        }
    }

    /// Fate of `b`, authored by `me`, on its way to `to`.
    pub fn dispose(&self, me: ValidatorId, b: &Block, to: ValidatorId, n: usize) -> Disposition {
        match self {
            AdversaryPolicy::PullInduction { delay, hold, paced, .. } => {
                if self.pull_induction_targets(me, b.round, n).contains(&to) {
                    if *paced && b.round.0 > 1 {
                        Disposition::Paced
                    } else {
                        hold.map_or(Disposition::Send, Disposition::Delay)
                    }
                } else if let Some(d) = delay {
                    Disposition::Delay(*d)
                } else {
                    Disposition::Drop
                }
            }
            AdversaryPolicy::HoardAndDump { hoard_rounds } if b.round.0 <= *hoard_rounds && b.round.0 > 0 => {
                Disposition::Hoard
            }
            _ => Disposition::Send,
        }
    }

    /// Whether creating `b` releases the hoard.
    pub fn dumps_at(&self, b: &Block) -> bool {
        matches!(self, AdversaryPolicy::HoardAndDump { hoard_rounds } if b.round.0 == *hoard_rounds && *hoard_rounds > 0)
    }
}
