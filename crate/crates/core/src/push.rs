// SPDX-License-Identifier: Apache-2.0

//! Admission-controlled optimistic push: the threshold clock, reputation
//! driven parent selection, block construction and the reputation rules.

use std::{
    collections::{BTreeMap, BTreeSet},
    sync::Arc,
};

use thiserror::Error;

use crate::{
    block::Block,
    config::ProtocolConfig,
    dag::DagState,
    sync::BlameRule,
    types::{Round, RoundMark, ValidatorId},
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PushError {
    #[error("only {got} of {needed} parents available")]
    InsufficientParents { got: usize, needed: usize },
    #[error("own block of the previous round is not accepted")]
    MissingSelfParent,
}

/// Local reputation scores, one per validator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReputationTable {
    scores: Vec<i64>,
    credited: BTreeSet<Round>,
}

impl ReputationTable {
    pub fn new(initial: Vec<i64>) -> Self {
        ReputationTable { scores: initial, credited: BTreeSet::new() }
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![0; n])
    }

    pub fn get(&self, v: ValidatorId) -> i64 {
        self.scores[v.0]
    }

    pub fn scores(&self) -> &[i64] {
        &self.scores
    }

    fn add(&mut self, v: ValidatorId, delta: i64) -> i64 {
        self.scores[v.0] += delta;
        self.scores[v.0]
    }
}

/// `Some(current + 1)` iff `2f + 1` distinct authors have an accepted block
/// at `current`.
pub fn try_advance_round(dag: &DagState, current: Round, cfg: &ProtocolConfig) -> Option<Round> {
    (dag.accepted_authors_at(current) >= cfg.quorum()).then(|| current.next())
}

/// Own previous block plus the `2f` best-reputed other accepted blocks of
/// round `r - 1`; ties go to the lower index.
pub fn ac_parent_selection(
    r: Round,
    me: ValidatorId,
    candidates: &[Arc<Block>],
    rep: &ReputationTable,
    dag: &DagState,
    cfg: &ProtocolConfig,
) -> Result<Vec<Arc<Block>>, PushError> {
    let prev = r.prev().expect("genesis is never created");
    let mut eligible: Vec<_> =
        candidates.iter().filter(|b| b.round == prev && dag.is_accepted(&b.digest())).cloned().collect();
    let Some(pos) = eligible.iter().position(|b| b.author == me) else {
        return Err(PushError::MissingSelfParent);
    };
    let own = eligible.remove(pos);
    if eligible.len() < 2 * cfg.f {
        return Err(PushError::InsufficientParents { got: eligible.len() + 1, needed: cfg.quorum() });
    }
    eligible.sort_by_key(|b| (std::cmp::Reverse(rep.get(b.author)), b.author));
    eligible.truncate(2 * cfg.f);
    let mut parents = vec![own];
    parents.extend(eligible);
    Ok(parents)
}

/// Element-wise max over parent rounds and parent ancestors arrays.
pub fn compute_ancestors<'a>(parents: impl IntoIterator<Item = &'a Block>, n: usize) -> Vec<RoundMark> {
    let mut out: Vec<RoundMark> = vec![None; n];
    for p in parents {
        out[p.author.0] = out[p.author.0].max(Some(p.round));
        for (slot, a) in out.iter_mut().zip(&p.ancestors) {
            *slot = (*slot).max(*a);
        }
    }
    out
}

/// Builds the round-`r` block of `me`. `candidates` are the latest held
/// blocks per author with round at most `r - 1`.
pub fn create_block(
    r: Round,
    me: ValidatorId,
    candidates: &[Arc<Block>],
    rep: &ReputationTable,
    dag: &DagState,
    cfg: &ProtocolConfig,
) -> Result<Block, PushError> {
    let parents = ac_parent_selection(r, me, candidates, rep, dag, cfg)?;
    let ancestors = compute_ancestors(parents.iter().map(|b| b.as_ref()), cfg.n);
    let chosen: BTreeSet<_> = parents.iter().map(|b| b.digest()).collect();
    let weaklinks = candidates
        .iter()
        .filter(|b| !chosen.contains(&b.digest()) && dag.is_accepted(&b.digest()))
        .filter(|b| ancestors[b.author.0] < Some(b.round))
        .map(|b| b.reference())
        .collect();
    let mut watermark = vec![None; cfg.n];
    for b in candidates {
        watermark[b.author.0] = Some(b.round);
    }
    Ok(Block::new(
        r,
        me,
        parents.iter().map(|b| b.reference()).collect(),
        weaklinks,
        watermark,
        ancestors,
        vec![],
    ))
}

/// Credits every validator attested by `2f + 1` round-`r` blocks whose
/// watermark reaches `r - watermark_lag`. Applied once per round.
pub fn update_score_with_watermarks(
    rep: &mut ReputationTable,
    r: Round,
    quorum_blocks: &[Arc<Block>],
    cfg: &ProtocolConfig,
) -> Vec<(ValidatorId, i64)> {
    if !rep.credited.insert(r) {
        return vec![];
    }
    let threshold = r.0.checked_sub(cfg.watermark_lag).map(Round);
    let mut out = vec![];
    for j in ValidatorId::all(cfg.n) {
        let attest = quorum_blocks
            .iter()
            .filter(|b| match (b.watermark[j.0], threshold) {
                (Some(w), Some(t)) => w >= t,
                (_, None) => true,
                (None, Some(_)) => false,
            })
            .map(|b| b.author)
            .collect::<BTreeSet<_>>()
            .len();
        if attest >= cfg.quorum() {
            out.push((j, rep.add(j, 1)));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlameEvent {
    pub target: ValidatorId,
    pub round: Round,
    pub rule: BlameRule,
    pub score: i64,
}

/// Pull reports per block, keyed by (author, round).
#[derive(Clone, Debug, Default)]
pub struct BlameLedger {
    reports: BTreeMap<(ValidatorId, Round), BTreeSet<ValidatorId>>,
    already_blamed: BTreeSet<(ValidatorId, Round)>,
}

impl BlameLedger {
    /// Records that `reporter` pulled `author`'s block of `round`. A pull by
    /// `me` blames at once; otherwise `f + 1` distinct reporters do.
    #[allow(clippy::too_many_arguments)]
    pub fn record_pull_report(
        &mut self,
        me: ValidatorId,
        author: ValidatorId,
        round: Round,
        reporter: ValidatorId,
        rep: &mut ReputationTable,
        cfg: &ProtocolConfig,
    ) -> Option<BlameEvent> {
        if author == me {
            return None;
        }
        let key = (author, round);
        let reporters = self.reports.entry(key).or_default();
        reporters.insert(reporter);
        let rule = if reporter == me {
            BlameRule::OwnPull
        } else if reporters.len() >= cfg.weak_quorum() {
            BlameRule::Reports
        } else {
            return None;
        };
        if !self.already_blamed.insert(key) {
            return None;
        }
        let score = rep.add(author, -cfg.reputation_penalty);
        Some(BlameEvent { target: author, round, rule, score })
    }

    pub fn blamed(&self) -> &BTreeSet<(ValidatorId, Round)> {
        &self.already_blamed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{dag::AcceptanceRule, types::SimTime};

    fn cfg4() -> ProtocolConfig {
        ProtocolConfig::new(4, 1, SimTime::from_millis(100)).unwrap()
    }

    fn v(i: usize) -> ValidatorId {
        ValidatorId(i - 1)
    }

    fn genesis_dag() -> (DagState, Vec<Arc<Block>>) {
        let (dag, _) = DagState::with_genesis(4, 1, AcceptanceRule::ImplicitPoa);
        let g = ValidatorId::all(4).map(|a| dag.block_at(a, Round(0)).unwrap().clone()).collect();
        (dag, g)
    }

    fn round_one(g: &[Arc<Block>], author: usize, others: [usize; 2]) -> Arc<Block> {
        let parents = [&g[author], &g[others[0]], &g[others[1]]];
        Arc::new(Block::new(
            Round(1),
            ValidatorId(author),
            parents.iter().map(|b| b.reference()).collect(),
            vec![],
            vec![Some(Round(0)); 4],
            compute_ancestors(parents.iter().map(|b| b.as_ref()), 4),
            vec![],
        ))
    }

    #[test]
    fn threshold_clock() {
        let cfg = cfg4();
        let (mut dag, g) = genesis_dag();
        assert_eq!(try_advance_round(&dag, Round(0), &cfg), Some(Round(1)));
        let b: Vec<_> = (0..4).map(|a| round_one(&g, a, [(a + 1) % 4, (a + 2) % 4])).collect();
        for x in &b[..2] {
            dag.insert_received(x.clone()).unwrap();
        }
        dag.accept_ready();
        assert_eq!(try_advance_round(&dag, Round(1), &cfg), None);
        // An equivocating second block from v1 does not count.
        let twin = Arc::new(b[0].as_ref().clone().with_payload(vec![1]));
        dag.insert_received(twin).unwrap();
        dag.accept_ready();
        assert_eq!(dag.accepted_authors_at(Round(1)), 2);
        assert_eq!(try_advance_round(&dag, Round(1), &cfg), None);
        dag.insert_received(b[2].clone()).unwrap();
        dag.accept_ready();
        assert_eq!(try_advance_round(&dag, Round(1), &cfg), Some(Round(2)));
    }

    #[test]
    fn parent_selection_by_reputation() {
        let cfg = cfg4();
        let (dag, g) = genesis_dag();
        let rep = ReputationTable::new(vec![5, 3, 9, 1]);
        let parents = ac_parent_selection(Round(1), v(1), &g, &rep, &dag, &cfg).unwrap();
        let authors: BTreeSet<_> = parents.iter().map(|b| b.author).collect();
        assert_eq!(authors, BTreeSet::from([v(3), v(1), v(2)]));
        assert_eq!(parents[0].author, v(1));
    }

    #[test]
    fn own_block_is_kept_even_when_poorly_reputed() {
        let cfg = cfg4();
        let (dag, g) = genesis_dag();
        let rep = ReputationTable::new(vec![5, 3, 9, 1]);
        let parents = ac_parent_selection(Round(1), v(4), &g, &rep, &dag, &cfg).unwrap();
        let authors: BTreeSet<_> = parents.iter().map(|b| b.author).collect();
        assert_eq!(authors, BTreeSet::from([v(4), v(3), v(1)]));
    }

    #[test]
    fn equal_reputation_prefers_low_indices() {
        let cfg = cfg4();
        let (dag, g) = genesis_dag();
        let rep = ReputationTable::uniform(4);
        let parents = ac_parent_selection(Round(1), v(1), &g, &rep, &dag, &cfg).unwrap();
        let authors: Vec<_> = parents.iter().map(|b| b.author).collect();
        assert_eq!(authors, vec![v(1), v(2), v(3)]);
    }

    #[test]
    fn too_few_parents() {
        let cfg = cfg4();
        let (dag, g) = genesis_dag();
        let rep = ReputationTable::uniform(4);
        assert_eq!(
            ac_parent_selection(Round(1), v(1), &g[..2], &rep, &dag, &cfg),
            Err(PushError::InsufficientParents { got: 2, needed: 3 })
        );
        assert_eq!(
            ac_parent_selection(Round(1), v(1), &g[1..], &rep, &dag, &cfg),
            Err(PushError::MissingSelfParent)
        );
    }

    #[test]
    fn ancestors_of_genesis_parents() {
        let g: Vec<_> = ValidatorId::all(4).map(|a| Block::genesis(a, 4)).collect();
        assert_eq!(
            compute_ancestors(&g[..3], 4),
            vec![Some(Round(0)), Some(Round(0)), Some(Round(0)), None]
        );
        assert_eq!(compute_ancestors(std::iter::empty::<&Block>(), 4), vec![None; 4]);
    }

    #[test]
    fn ancestors_follow_a_chain() {
        let g: Vec<_> = ValidatorId::all(4).map(|a| Arc::new(Block::genesis(a, 4))).collect();
        let b1 = round_one(&g, 0, [1, 2]);
        let anc = compute_ancestors([b1.as_ref()], 4);
        let mut expected = b1.ancestors.clone();
        expected[0] = Some(Round(1));
        assert_eq!(anc, expected);
    }

    #[test]
    fn filtered_block_becomes_weak_link() {
        let cfg = cfg4();
        let (dag, g) = genesis_dag();
        let rep = ReputationTable::new(vec![5, 3, 9, 1]);
        let b = create_block(Round(1), v(1), &g, &rep, &dag, &cfg).unwrap();
        assert_eq!(b.weaklinks, vec![g[3].reference()]);
        assert_eq!(b.watermark, vec![Some(Round(0)); 4]);
        assert!(crate::block::validate_block(&b, &cfg).is_ok());
    }

    #[test]
    fn watermark_is_empty_for_silent_validators() {
        let cfg = cfg4();
        let (dag, g) = genesis_dag();
        let rep = ReputationTable::uniform(4);
        let b = create_block(Round(1), v(1), &g[..3], &rep, &dag, &cfg).unwrap();
        assert_eq!(b.watermark[3], None);
        assert!(b.weaklinks.is_empty());
    }

    #[test]
    fn watermark_quorum_credits_once() {
        let cfg = cfg4();
        let (_, g) = genesis_dag();
        let blocks: Vec<_> = (0..3).map(|a| round_one(&g, a, [(a + 1) % 3, (a + 2) % 3])).collect();
        let mut rep = ReputationTable::uniform(4);
        let credited = update_score_with_watermarks(&mut rep, Round(1), &blocks, &cfg);
        assert_eq!(credited.len(), 4);
        assert_eq!(rep.scores(), &[1, 1, 1, 1]);
        assert!(update_score_with_watermarks(&mut rep, Round(1), &blocks, &cfg).is_empty());
        assert_eq!(rep.scores(), &[1, 1, 1, 1]);
    }

    #[test]
    fn two_attestations_are_not_enough() {
        let cfg = cfg4();
        let (_, g) = genesis_dag();
        let mut blocks: Vec<_> = (0..3).map(|a| round_one(&g, a, [(a + 1) % 3, (a + 2) % 3])).collect();
        let mut last = blocks[2].as_ref().clone();
        last.watermark[3] = None;
        blocks[2] = Arc::new(Block::new(
            last.round,
            last.author,
            last.parents,
            last.weaklinks,
            last.watermark,
            last.ancestors,
            vec![],
        ));
        let mut rep = ReputationTable::uniform(4);
        update_score_with_watermarks(&mut rep, Round(1), &blocks, &cfg);
        assert_eq!(rep.get(v(4)), 0);
        assert_eq!(rep.get(v(1)), 1);
    }

    #[test]
    fn own_pull_blames_immediately() {
        let cfg = cfg4();
        let mut rep = ReputationTable::uniform(4);
        let mut ledger = BlameLedger::default();
        let ev = ledger.record_pull_report(v(1), v(4), Round(3), v(1), &mut rep, &cfg).unwrap();
        assert_eq!(ev.rule, BlameRule::OwnPull);
        assert_eq!(rep.get(v(4)), -10_000);
        // Peers reporting the same block later do not penalize again.
        for r in [v(2), v(3)] {
            assert_eq!(ledger.record_pull_report(v(1), v(4), Round(3), r, &mut rep, &cfg), None);
        }
        assert_eq!(rep.get(v(4)), -10_000);
    }

    #[test]
    fn reports_blame_at_weak_quorum() {
        let cfg = cfg4();
        let mut rep = ReputationTable::uniform(4);
        let mut ledger = BlameLedger::default();
        assert_eq!(ledger.record_pull_report(v(1), v(4), Round(3), v(2), &mut rep, &cfg), None);
        assert_eq!(ledger.record_pull_report(v(1), v(4), Round(3), v(2), &mut rep, &cfg), None);
        assert_eq!(rep.get(v(4)), 0);
        let ev = ledger.record_pull_report(v(1), v(4), Round(3), v(3), &mut rep, &cfg).unwrap();
        assert_eq!(ev.rule, BlameRule::Reports);
        assert_eq!(ledger.record_pull_report(v(1), v(4), Round(3), v(4), &mut rep, &cfg), None);
        assert_eq!(rep.get(v(4)), -10_000);
        assert_eq!(ledger.blamed().len(), 1);
    }

    #[test]
    fn never_blames_itself() {
        let cfg = cfg4();
        let mut rep = ReputationTable::uniform(4);
        let mut ledger = BlameLedger::default();
        for r in [v(2), v(3), v(4)] {
            assert_eq!(ledger.record_pull_report(v(1), v(1), Round(3), r, &mut rep, &cfg), None);
        }
        assert_eq!(rep.get(v(1)), 0);
    }
}
