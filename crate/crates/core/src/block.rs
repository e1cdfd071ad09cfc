// SPDX-License-Identifier: Apache-2.0

//! The DAG vertex and its structural validation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::{
    config::ProtocolConfig,
    types::{BlockDigest, BlockRef, Round, RoundMark, ValidatorId},
};

/// Stand-in for a signature. Channels are authenticated by the simulator, so
/// the tag only binds the author to the block content.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AuthTag(pub u64);

impl AuthTag {
    fn compute(author: ValidatorId, digest: &BlockDigest) -> Self {
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest.0[..8]);
        AuthTag(u64::from_le_bytes(word) ^ (author.0 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub round: Round,
    pub author: ValidatorId,
    /// Strong links, all to blocks of `round - 1`.
    pub parents: Vec<BlockRef>,
    /// Accepted blocks that were not chosen as parents.
    pub weaklinks: Vec<BlockRef>,
    /// Highest round received from each validator when this block was made.
    pub watermark: Vec<RoundMark>,
    /// Highest round of each validator reachable through strong links.
    pub ancestors: Vec<RoundMark>,
    pub payload: Vec<u8>,
    pub signature: AuthTag,
    digest: BlockDigest,
}

impl Block {
    pub fn new(
        round: Round,
        author: ValidatorId,
        parents: Vec<BlockRef>,
        weaklinks: Vec<BlockRef>,
        watermark: Vec<RoundMark>,
        ancestors: Vec<RoundMark>,
        payload: Vec<u8>,
    ) -> Self {
        let mut block = Block {
            round,
            author,
            parents,
            weaklinks,
            watermark,
            ancestors,
            payload,
            signature: AuthTag(0),
            digest: BlockDigest::default(),
        };
        block.digest = digest(&block);
        block.signature = AuthTag::compute(author, &block.digest);
        block
    }

    /// The round-0 block of `author`. Identical at every validator.
    pub fn genesis(author: ValidatorId, n: usize) -> Self {
        Block::new(Round::GENESIS, author, vec![], vec![], vec![None; n], vec![None; n], vec![])
    }

    pub fn digest(&self) -> BlockDigest {
        self.digest
    }

    pub fn reference(&self) -> BlockRef {
        BlockRef { round: self.round, author: self.author, digest: self.digest }
    }

    /// Strong links followed by weak links.
    pub fn links(&self) -> impl Iterator<Item = &BlockRef> {
        self.parents.iter().chain(self.weaklinks.iter())
    }

    pub fn is_genesis(&self) -> bool {
        self.round == Round::GENESIS
    }

    /// Replaces the payload while keeping the authenticator valid; used by
    /// tests that need content-distinct blocks.
    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self.digest = digest(&self);
        self.signature = AuthTag::compute(self.author, &self.digest);
        self
    }
}

fn encode_mark(out: &mut Vec<u8>, mark: RoundMark) {
    let v: i64 = match mark {
        Some(r) => r.0 as i64,
        None => -1,
    };
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_refs(out: &mut Vec<u8>, refs: &[BlockRef]) {
    out.extend_from_slice(&(refs.len() as u32).to_le_bytes());
    for r in refs {
        out.extend_from_slice(&r.round.0.to_le_bytes());
        out.extend_from_slice(&(r.author.0 as u32).to_le_bytes());
        out.extend_from_slice(&r.digest.0);
    }
}

/// Canonical byte encoding: fields in declaration order, little-endian
/// integers, every variable-length field prefixed with its `u32` length,
/// `-1` for absent round marks. The signature is not part of the encoding.
pub fn canonical_bytes(b: &Block) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 44 * (b.parents.len() + b.weaklinks.len()));
    out.extend_from_slice(&b.round.0.to_le_bytes());
    out.extend_from_slice(&(b.author.0 as u32).to_le_bytes());
    encode_refs(&mut out, &b.parents);
    encode_refs(&mut out, &b.weaklinks);
    out.extend_from_slice(&(b.watermark.len() as u32).to_le_bytes());
    for m in &b.watermark {
        encode_mark(&mut out, *m);
    }
    out.extend_from_slice(&(b.ancestors.len() as u32).to_le_bytes());
    for m in &b.ancestors {
        encode_mark(&mut out, *m);
    }
    out.extend_from_slice(&(b.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&b.payload);
    out
}

/// SHA-256 of the canonical encoding.
pub fn digest(b: &Block) -> BlockDigest {
    BlockDigest(Sha256::digest(canonical_bytes(b)).into())
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("author {0} is not in the committee")]
    UnknownAuthor(ValidatorId),
    #[error("authenticator does not match author and content")]
    BadSignature,
    #[error("{got} parents, expected {expected}")]
    WrongParentCount { got: usize, expected: usize },
    #[error("parent {0} is not from the previous round")]
    WrongParentRound(BlockRef),
    #[error("two parents from author {0}")]
    DuplicateParentAuthor(ValidatorId),
    #[error("author's own previous block is not a parent")]
    MissingSelfParent,
    #[error("{0} is both a parent and a weak link")]
    OverlappingLinks(BlockDigest),
    #[error("weak link {0} is not from an earlier round")]
    WrongWeakLinkRound(BlockRef),
    #[error("ancestors array is inconsistent with the parents")]
    BadAncestorsArray,
    #[error("watermark array has the wrong length")]
    BadWatermarkArray,
}

/// Checks every structural invariant of a block. Pure.
pub fn validate_block(b: &Block, cfg: &ProtocolConfig) -> Result<(), ValidationError> {
    if b.author.0 >= cfg.n {
        return Err(ValidationError::UnknownAuthor(b.author));
    }
    if b.signature != AuthTag::compute(b.author, &b.digest) || b.digest != digest(b) {
        return Err(ValidationError::BadSignature);
    }
    if b.watermark.len() != cfg.n {
        return Err(ValidationError::BadWatermarkArray);
    }
    if b.ancestors.len() != cfg.n {
        return Err(ValidationError::BadAncestorsArray);
    }

    let Some(prev) = b.round.prev() else {
        if !b.parents.is_empty() || !b.weaklinks.is_empty() {
            return Err(ValidationError::WrongParentCount { got: b.parents.len(), expected: 0 });
        }
        if b.ancestors.iter().any(Option::is_some) {
            return Err(ValidationError::BadAncestorsArray);
        }
        return Ok(());
    };

    if b.parents.len() < cfg.quorum() {
        return Err(ValidationError::WrongParentCount {
            got: b.parents.len(),
            expected: cfg.quorum(),
        });
    }
    let mut authors = BTreeSet::new();
    for p in &b.parents {
        if p.round != prev {
            return Err(ValidationError::WrongParentRound(*p));
        }
        if p.author.0 >= cfg.n {
            return Err(ValidationError::UnknownAuthor(p.author));
        }
        if !authors.insert(p.author) {
            return Err(ValidationError::DuplicateParentAuthor(p.author));
        }
    }
    if !authors.contains(&b.author) {
        return Err(ValidationError::MissingSelfParent);
    }
    let parent_digests: BTreeSet<_> = b.parents.iter().map(|p| p.digest).collect();
    for w in &b.weaklinks {
        if parent_digests.contains(&w.digest) {
            return Err(ValidationError::OverlappingLinks(w.digest));
        }
        if w.round > prev || w.author.0 >= cfg.n {
            return Err(ValidationError::WrongWeakLinkRound(*w));
        }
    }
    if b.ancestors[b.author.0] != Some(prev) {
        return Err(ValidationError::BadAncestorsArray);
    }
    if b.parents.iter().any(|p| b.ancestors[p.author.0] < Some(p.round)) {
        return Err(ValidationError::BadAncestorsArray);
    }
    Ok(())
}
