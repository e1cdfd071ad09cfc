// SPDX-License-Identifier: Apache-2.0

//! Block synchronizers for DAG-based BFT consensus.
//!
//! [`hybrid`] combines push-based block creation with live and bulk pulls
//! and a reputation mechanism. [`baselines`] holds an uncertified and a
//! certified reference. [`simnet`] runs any of them over a deterministic
//! simulated network.

pub mod adversary;
pub mod baselines;
pub mod block;
pub mod config;
pub mod consensus;
pub mod dag;
pub mod hybrid;
pub mod messages;
pub mod properties;
pub mod pull;
pub mod push;
pub mod simnet;
pub mod sync;
pub mod types;

pub use block::Block;
pub use config::ProtocolConfig;
pub use sync::{SyncKind, Synchronizer};
pub use types::{BlockDigest, BlockRef, Round, SimTime, ValidatorId};
