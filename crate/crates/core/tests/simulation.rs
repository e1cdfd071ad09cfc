// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use blocksync_core::{
    adversary::AdversaryPolicy,
    consensus::CommitStatus,
    properties::check_all,
    simnet::{run, Control, NetworkModel, RunOutput, SchedulerPolicy, SimSetup, TraceRecord},
    sync::NodeEvent,
    ProtocolConfig, Round, SimTime, SyncKind, ValidatorId,
};

fn ms(x: u64) -> SimTime {
    SimTime::from_millis(x)
}

fn setup(kind: SyncKind, n: usize, rounds: u64, seed: u64) -> SimSetup {
    let f = ProtocolConfig::max_faults(n);
    let mut cfg = ProtocolConfig::new(n, f, ms(100)).unwrap();
    cfg.max_round = rounds;
    SimSetup::new(cfg, kind, NetworkModel::uniform(n, ms(100)), seed)
}

/// Latest entry time of each round over correct validators.
fn entry_times(out: &RunOutput) -> BTreeMap<Round, SimTime> {
    let mut m = BTreeMap::new();
    for rec in &out.trace {
        if let TraceRecord::Node { t, node, event: NodeEvent::RoundEntered { round } } = rec {
            if out.correct[node.0] {
                let e = m.entry(*round).or_insert(*t);
                *e = (*e).max(*t);
            }
        }
    }
    m
}

#[test]
fn fault_free_rounds_take_one_delay() {
    for kind in [SyncKind::Hybrid, SyncKind::Uncertified] {
        let out = run(setup(kind, 4, 20, 3)).unwrap();
        assert!(check_all(&out, &setup(kind, 4, 20, 3).protocol).is_empty());
        let q = entry_times(&out);
        for r in 1..=20 {
            assert_eq!(q[&Round(r)], ms(100 * (r - 1)), "{kind:?} round {r}");
        }
    }
}

#[test]
fn certified_rounds_take_three_delays() {
    let out = run(setup(SyncKind::Certified, 4, 10, 3)).unwrap();
    let q = entry_times(&out);
    assert_eq!(q[&Round(10)], ms(2_700));
}

#[test]
fn fault_free_commits_agree() {
    for kind in SyncKind::ALL {
        let out = run(setup(kind, 7, 15, 9)).unwrap();
        let first = &out.commits[0];
        assert_eq!(first.len(), 13);
        assert!(first.iter().all(|c| matches!(c.status, CommitStatus::Committed { .. })));
        for other in &out.commits[1..] {
            let a: Vec<_> = first.iter().map(|c| c.digest()).collect();
            let b: Vec<_> = other.iter().map(|c| c.digest()).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let mk = || {
        let mut s = setup(SyncKind::Hybrid, 4, 12, 77);
        s.network.delta_bound = ms(300);
        s.network.gst = ms(800);
        s.network.policy = SchedulerPolicy::RandomPreGst;
        s.policies[2] = AdversaryPolicy::pull_induction();
        s.record_messages = true;
        s
    };
    let a = run(mk()).unwrap().trace;
    let b = run(mk()).unwrap().trace;
    assert_eq!(a, b);
}

#[test]
fn crashed_validator_stops_and_others_continue() {
    for kind in SyncKind::ALL {
        let mut s = setup(kind, 4, 12, 5);
        s.controls.push((ms(350), Control::Crash { node: ValidatorId(1) }));
        let cfg = s.protocol.clone();
        let out = run(s).unwrap();
        assert!(!out.correct[1]);
        assert!(check_all(&out, &cfg).is_empty(), "{kind:?}: {:?}", check_all(&out, &cfg));
    }
}

#[test]
fn reputation_is_initial_plus_recorded_changes() {
    let mut s = setup(SyncKind::Hybrid, 4, 30, 2);
    s.policies[3] = AdversaryPolicy::pull_induction();
    let out = run(s).unwrap();
    for (i, snap) in out.snapshots.iter().enumerate() {
        let mut total = vec![0i64; 4];
        for rec in &out.trace {
            if let TraceRecord::Node { node, event: NodeEvent::ReputationChanged { target, delta, .. }, .. } = rec {
                if node.0 == i {
                    total[target.0] += delta;
                }
            }
        }
        assert_eq!(snap.reputation.as_ref().unwrap(), &total);
    }
}
