// SPDX-License-Identifier: Apache-2.0

use std::{collections::BTreeSet, sync::Arc};

use serde::{Deserialize, Serialize};

use crate::{
    block::Block,
    types::{BlockDigest, BlockRef, Round, ValidatorId},
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PullMode {
    /// Deterministic pull of blocks the threshold clock is waiting on.
    Live,
    /// One random peer per missing block, off the push path.
    Bulk,
    /// The uncertified baseline's constant-size random pull.
    Random,
    /// The certified baseline's pull from certificate signers.
    Signers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Wanted {
    Slot(ValidatorId, Round),
    Digest(BlockDigest),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PullRequest {
    pub mode: PullMode,
    pub wanted: Vec<Wanted>,
}

/// Proof that `2f + 1` validators hold a block and have its parents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub block: BlockRef,
    pub signers: BTreeSet<ValidatorId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PullResponse {
    pub blocks: Vec<Arc<Block>>,
    pub certificates: Vec<Certificate>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Block(Arc<Block>),
    PullRequest(PullRequest),
    PullResponse(PullResponse),
    Signature { block: BlockRef, signer: ValidatorId },
    Certificate(Certificate),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Block,
    PullRequest,
    PullResponse,
    Signature,
    Certificate,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Block(_) => MessageKind::Block,
            Message::PullRequest(_) => MessageKind::PullRequest,
            Message::PullResponse(_) => MessageKind::PullResponse,
            Message::Signature { .. } => MessageKind::Signature,
            Message::Certificate(_) => MessageKind::Certificate,
        }
    }

    /// The block a message is about, when there is exactly one.
    pub fn digest(&self) -> Option<BlockDigest> {
        match self {
            Message::Block(b) => Some(b.digest()),
            Message::Signature { block, .. } => Some(block.digest),
            Message::Certificate(c) => Some(c.block.digest),
            Message::PullResponse(r) if r.blocks.len() == 1 => Some(r.blocks[0].digest()),
            Message::PullRequest(PullRequest { wanted, .. }) => match wanted.as_slice() {
                [Wanted::Digest(d)] => Some(*d),
                _ => None,
            },
            _ => None,
        }
    }
}
