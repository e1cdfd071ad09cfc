// SPDX-License-Identifier: Apache-2.0

//! Safety and liveness checks over a finished run.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{
    block::validate_block,
    config::ProtocolConfig,
    simnet::{RunOutput, TraceRecord},
    sync::NodeEvent,
    types::{Round, ValidatorId},
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    RoundProgression,
    RoundTermination,
    BlockAvailability,
    CausalAvailability,
    Quiescence,
    Validity,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::RoundProgression,
        Property::RoundTermination,
        Property::BlockAvailability,
        Property::CausalAvailability,
        Property::Quiescence,
        Property::Validity,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub property: Property,
    pub node: Option<ValidatorId>,
    pub detail: String,
}

/// Every round some correct validator moved past was created by a quorum.
pub fn check_round_progression(out: &RunOutput, cfg: &ProtocolConfig) -> Vec<Violation> {
    let mut creators: BTreeMap<Round, BTreeSet<ValidatorId>> = BTreeMap::new();
    let mut highest = Round(0);
    for rec in &out.trace {
        if let TraceRecord::Node { node, event, .. } = rec {
            match event {
                NodeEvent::BlockCreated { block, .. } => {
                    creators.entry(block.round).or_default().insert(*node);
                }
                NodeEvent::RoundEntered { round } if out.correct[node.0] => highest = highest.max(*round),
                _ => {}
            }
        }
    }
    (1..highest.0)
        .map(Round)
        .filter_map(|r| {
            let got = creators.get(&r).map_or(0, |s| s.len());
            (got < cfg.quorum()).then(|| Violation {
                property: Property::RoundProgression,
                node: None,
                detail: format!("round {} has {got} creators", r.0),
            })
        })
        .collect()
}

/// A correct validator in round `r` has accepted a quorum of blocks in
/// every earlier round.
pub fn check_round_termination(out: &RunOutput, cfg: &ProtocolConfig) -> Vec<Violation> {
    let mut v = vec![];
    for (i, snap) in out.snapshots.iter().enumerate().filter(|(i, _)| out.correct[*i]) {
        let mut authors: BTreeMap<Round, BTreeSet<ValidatorId>> = BTreeMap::new();
        for r in &snap.accepted_refs {
            authors.entry(r.round).or_default().insert(r.author);
        }
        for r in 0..snap.round.0 {
            let got = authors.get(&Round(r)).map_or(0, |s| s.len());
            if got < cfg.quorum() {
                v.push(Violation {
                    property: Property::RoundTermination,
                    node: Some(ValidatorId(i)),
                    detail: format!("round {r} has {got} accepted authors"),
                });
            }
        }
    }
    v
}

/// Accepted blocks are held locally.
pub fn check_block_availability(out: &RunOutput) -> Vec<Violation> {
    let mut v = vec![];
    for (i, snap) in out.snapshots.iter().enumerate().filter(|(i, _)| out.correct[*i]) {
        for d in snap.accepted.iter().filter(|d| !snap.stored.contains_key(*d)) {
            v.push(Violation {
                property: Property::BlockAvailability,
                node: Some(ValidatorId(i)),
                detail: format!("{d} accepted but not stored"),
            });
        }
    }
    v
}

/// Everything an accepted block links is accepted too.
pub fn check_causal_availability(out: &RunOutput) -> Vec<Violation> {
    let mut v = vec![];
    for (i, snap) in out.snapshots.iter().enumerate().filter(|(i, _)| out.correct[*i]) {
        for d in &snap.accepted {
            let Some(b) = snap.stored.get(d) else { continue };
            for l in b.links().filter(|l| !snap.accepted.contains(&l.digest)) {
                v.push(Violation {
                    property: Property::CausalAvailability,
                    node: Some(ValidatorId(i)),
                    detail: format!("{d} links unaccepted {}", l.digest),
                });
            }
        }
    }
    v
}

pub fn check_quiescence(out: &RunOutput) -> Vec<Violation> {
    let mut v = vec![];
    if !out.quiescent {
        v.push(Violation { property: Property::Quiescence, node: None, detail: "events left at horizon".into() });
    }
    for (i, snap) in out.snapshots.iter().enumerate().filter(|(i, _)| out.correct[*i]) {
        if snap.unresolved_pulls > 0 {
            v.push(Violation {
                property: Property::Quiescence,
                node: Some(ValidatorId(i)),
                detail: format!("{} pulls unresolved", snap.unresolved_pulls),
            });
        }
    }
    v
}

pub fn check_validity(out: &RunOutput, cfg: &ProtocolConfig) -> Vec<Violation> {
    let mut v = vec![];
    for (i, snap) in out.snapshots.iter().enumerate().filter(|(i, _)| out.correct[*i]) {
        for d in &snap.accepted {
            let Some(b) = snap.stored.get(d) else { continue };
            if let Err(e) = validate_block(b, cfg) {
                v.push(Violation { property: Property::Validity, node: Some(ValidatorId(i)), detail: format!("{d}: {e}") });
            }
        }
    }
    v
}

/// Runs every check.
pub fn check_all(out: &RunOutput, cfg: &ProtocolConfig) -> Vec<Violation> {
    let mut v = check_round_progression(out, cfg);
    v.extend(check_round_termination(out, cfg));
    v.extend(check_block_availability(out));
    v.extend(check_causal_availability(out));
    v.extend(check_quiescence(out));
    v.extend(check_validity(out, cfg));
    v
}
