// SPDX-License-Identifier: Apache-2.0

//! Hybrid pull: incoming blocks are routed to the live or bulk set, live
//! gaps are pulled from every peer, bulk gaps from one random peer at a time.

use std::{
    collections::{BTreeMap, BTreeSet},
    sync::Arc,
};

use rand::{seq::IteratorRandom, Rng};

use crate::{
    block::Block,
    dag::{AcceptEvent, DagError, DagState, Slot},
    messages::Wanted,
    sync::Class,
    types::{Round, SimTime, ValidatorId},
};

/// Inserts `b` and routes it: accepted (possibly with history still to
/// fetch), bulk when older than `current`, live otherwise.
pub fn classify_incoming(
    dag: &mut DagState,
    b: Arc<Block>,
    current: Round,
) -> Result<(Class, Vec<AcceptEvent>), DagError> {
    let d = b.digest();
    let round = b.round;
    dag.insert_received(b)?;
    let events = dag.accept_ready();
    let class = if dag.is_accepted(&d) {
        Class::Accepted
    } else if round < current {
        dag.add_bulk(d);
        Class::Bulk
    } else {
        dag.add_live(d);
        Class::Live
    };
    Ok((class, events))
}

/// Why live blocks may move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Promotion {
    RoundAdvanced(Round),
    LiveSetGrew,
}

/// Moves live blocks to the bulk set, either because the round moved past
/// them or because they became acceptable. Returns the moved digests.
pub fn promote(dag: &mut DagState, trigger: Promotion) -> (Vec<crate::types::BlockDigest>, Vec<AcceptEvent>) {
    match trigger {
        Promotion::RoundAdvanced(r) => (dag.demote_live_below(r), vec![]),
        Promotion::LiveSetGrew => {
            let before: BTreeSet<_> = dag.live_set().clone();
            let events = dag.accept_ready();
            let moved = before.difference(dag.live_set()).copied().collect();
            (moved, events)
        }
    }
}

/// Accepted blocks matching `wanted`, at most one per entry.
pub fn serve(dag: &DagState, wanted: &[Wanted]) -> Vec<Arc<Block>> {
    let mut seen = BTreeSet::new();
    wanted
        .iter()
        .filter_map(|w| match w {
            Wanted::Slot(a, r) => dag.accepted_block_at(*a, *r),
            Wanted::Digest(d) => dag.get(d).filter(|_| dag.is_accepted(d)),
        })
        .filter(|b| seen.insert(b.digest()))
        .cloned()
        .collect()
}

/// Outstanding live entries and when each was last requested.
#[derive(Clone, Debug, Default)]
pub struct LivePuller {
    outstanding: BTreeMap<Slot, SimTime>,
}

impl LivePuller {
    /// Entries to request now: new ones, and ones unanswered for `retry`.
    /// Entries no longer missing are forgotten.
    pub fn flush(&mut self, missing: &BTreeSet<Slot>, now: SimTime, retry: SimTime) -> Vec<Slot> {
        self.outstanding.retain(|s, _| missing.contains(s));
        let due: Vec<Slot> = missing
            .iter()
            .filter(|s| self.outstanding.get(s).is_none_or(|t| now >= *t + retry))
            .copied()
            .collect();
        for s in &due {
            self.outstanding.insert(*s, now);
        }
        due
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    /// Earliest time an outstanding entry becomes due again.
    pub fn next_due(&self, retry: SimTime) -> Option<SimTime> {
        self.outstanding.values().min().map(|t| *t + retry)
    }
}

#[derive(Clone, Debug, Default)]
struct BulkEntry {
    tried: BTreeSet<ValidatorId>,
}

/// Outstanding bulk entries with the peers already asked for each.
#[derive(Clone, Debug, Default)]
pub struct BulkPuller {
    outstanding: BTreeMap<Slot, BulkEntry>,
}

impl BulkPuller {
    /// One target per newly missing entry. Entries no longer missing are
    /// forgotten.
    pub fn flush<R: Rng>(
        &mut self,
        missing: &BTreeSet<Slot>,
        rng: &mut R,
        me: ValidatorId,
        n: usize,
    ) -> Vec<(Slot, ValidatorId)> {
        self.outstanding.retain(|s, _| missing.contains(s));
        let mut out = vec![];
        for s in missing {
            if !self.outstanding.contains_key(s) {
                let mut entry = BulkEntry::default();
                if let Some(t) = pick(&mut entry, rng, me, n) {
                    out.push((*s, t));
                }
                self.outstanding.insert(*s, entry);
            }
        }
        out
    }

    /// Next target for `slot` after a timeout, drawn from the peers not yet
    /// tried. `None` when the entry is no longer outstanding.
    pub fn retry<R: Rng>(&mut self, slot: Slot, rng: &mut R, me: ValidatorId, n: usize) -> Option<ValidatorId> {
        let entry = self.outstanding.get_mut(&slot)?;
        pick(entry, rng, me, n)
    }

    pub fn resolve(&mut self, slot: &Slot) {
        self.outstanding.remove(slot);
    }

    pub fn is_outstanding(&self, slot: &Slot) -> bool {
        self.outstanding.contains_key(slot)
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }
}

fn pick<R: Rng>(entry: &mut BulkEntry, rng: &mut R, me: ValidatorId, n: usize) -> Option<ValidatorId> {
    let fresh = |tried: &BTreeSet<ValidatorId>| {
        ValidatorId::all(n).filter(|v| *v != me && !tried.contains(v)).collect::<Vec<_>>()
    };
    let mut pool = fresh(&entry.tried);
    if pool.is_empty() {
        entry.tried.clear();
        pool = fresh(&entry.tried);
    }
    let t = pool.into_iter().choose(rng)?;
    entry.tried.insert(t);
    Some(t)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::{dag::tests::figure4, types::BlockDigest};

    fn v(i: usize) -> ValidatorId {
        ValidatorId(i - 1)
    }

    #[test]
    fn figure4_routing() {
        let fig = figure4();
        // Replay v4's view from scratch, delivering round r+2 blocks last.
        let (mut dag, _) = DagState::with_genesis(4, 1, crate::dag::AcceptanceRule::ImplicitPoa);
        let late = [fig.b2_r2.digest(), fig.b4_r2.digest(), fig.b3_r2.digest()];
        let skip = [fig.b1_r1.digest(), fig.b3_r.digest(), fig.b3_r1.digest()];
        for b in fig.all.iter().filter(|b| !b.is_genesis()) {
            if !late.contains(&b.digest()) && !skip.contains(&b.digest()) {
                classify_incoming(&mut dag, b.clone(), Round(5)).unwrap();
            }
        }
        let (c2, _) = classify_incoming(&mut dag, fig.b2_r2.clone(), Round(5)).unwrap();
        // One referencer of B1^{r+1} so far: live.
        assert_eq!(c2, Class::Live);
        let (c4, events) = classify_incoming(&mut dag, fig.b4_r2.clone(), Round(5)).unwrap();
        assert_eq!(c4, Class::Accepted);
        // The second reference promotes the waiting live block too.
        assert!(events.iter().any(|e| e.block.digest == fig.b2_r2.digest()));
        assert!(dag.bulk_set().contains(&fig.b2_r2.digest()));
        let (c3, _) = classify_incoming(&mut dag, fig.b3_r2.clone(), Round(5)).unwrap();
        assert_eq!(c3, Class::Live);
    }

    #[test]
    fn old_round_goes_to_bulk() {
        let fig = figure4();
        let mut dag = fig.dag.clone();
        let (class, _) = classify_incoming(&mut dag, fig.b3_r1.clone(), Round(6)).unwrap();
        // B3^{r+1} still misses B3^r, and is behind the current round.
        assert_eq!(class, Class::Bulk);
    }

    #[test]
    fn promotion_on_round_advance() {
        let mut dag = figure4().dag;
        let (moved, _) = promote(&mut dag, Promotion::RoundAdvanced(Round(5)));
        assert!(moved.is_empty());
        let (moved, _) = promote(&mut dag, Promotion::RoundAdvanced(Round(6)));
        assert_eq!(moved.len(), 1);
        assert!(dag.live_set().is_empty());
    }

    #[test]
    fn promotion_when_poa_appears() {
        let fig = figure4();
        let mut dag = fig.dag.clone();
        let (moved, _) = promote(&mut dag, Promotion::LiveSetGrew);
        assert!(moved.is_empty());
        dag.insert_received(fig.b3_r1.clone()).unwrap();
        dag.insert_received(fig.b3_r.clone()).unwrap();
        let (moved, events) = promote(&mut dag, Promotion::LiveSetGrew);
        assert_eq!(moved, vec![fig.b3_r2.digest()]);
        assert_eq!(events.len(), 6);
    }

    #[test]
    fn serving_accepted_blocks_only() {
        let fig = figure4();
        let blocks = serve(
            &fig.dag,
            &[
                Wanted::Slot(v(2), Round(5)),
                Wanted::Slot(v(3), Round(4)),
                Wanted::Digest(fig.b3_r2.digest()),
                Wanted::Digest(BlockDigest([1; 32])),
                Wanted::Digest(fig.b2_r2.digest()),
            ],
        );
        assert_eq!(blocks, vec![fig.b2_r2.clone()]);
    }

    #[test]
    fn live_flush_and_retry() {
        let mut live = LivePuller::default();
        let missing = BTreeSet::from([(v(3), Round(3)), (v(3), Round(4))]);
        let retry = SimTime::from_millis(200);
        assert_eq!(live.flush(&missing, SimTime::ZERO, retry).len(), 2);
        assert!(live.flush(&missing, SimTime::from_millis(100), retry).is_empty());
        assert_eq!(live.next_due(retry), Some(SimTime::from_millis(200)));
        let one = BTreeSet::from([(v(3), Round(4))]);
        assert_eq!(live.flush(&one, SimTime::from_millis(200), retry), vec![(v(3), Round(4))]);
        assert!(live.flush(&BTreeSet::new(), SimTime::from_millis(300), retry).is_empty());
        assert_eq!(live.outstanding(), 0);
    }

    #[test]
    fn bulk_targets_one_fresh_peer_per_attempt() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut bulk = BulkPuller::default();
        let slot = (v(1), Round(4));
        let missing = BTreeSet::from([slot]);
        let first = bulk.flush(&missing, &mut rng, v(4), 4);
        assert_eq!(first.len(), 1);
        assert!(bulk.flush(&missing, &mut rng, v(4), 4).is_empty());
        let mut seen = BTreeSet::from([first[0].1]);
        for _ in 0..2 {
            let t = bulk.retry(slot, &mut rng, v(4), 4).unwrap();
            assert!(seen.insert(t), "resampled from the remaining peers");
        }
        assert_eq!(seen, BTreeSet::from([v(1), v(2), v(3)]));
        // All peers tried: start over.
        assert!(bulk.retry(slot, &mut rng, v(4), 4).is_some());
        bulk.resolve(&slot);
        assert_eq!(bulk.retry(slot, &mut rng, v(4), 4), None);
    }

    #[test]
    fn bulk_targets_are_seed_deterministic() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut bulk = BulkPuller::default();
            let missing: BTreeSet<_> = (1..6).map(|r| (v(2), Round(r))).collect();
            let mut out = bulk.flush(&missing, &mut rng, v(1), 10);
            for r in 1..6 {
                out.push(((v(2), Round(r)), bulk.retry((v(2), Round(r)), &mut rng, v(1), 10).unwrap()));
            }
            out
        };
        assert_eq!(run(3), run(3));
    }
}
