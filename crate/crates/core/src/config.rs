// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("committee of {n} cannot tolerate {f} faults (need n >= 3f + 1)")]
    TooManyFaults { n: usize, f: usize },
    #[error("committee must not be empty")]
    EmptyCommittee,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("expected {expected} initial reputations, got {got}")]
    ReputationLength { expected: usize, got: usize },
}

/// Parameters shared by every validator of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub n: usize,
    pub f: usize,
    /// Reputation penalty applied on a blame.
    pub reputation_penalty: i64,
    /// Retry interval of random (bulk and baseline) pulls.
    pub bulk_retry_timeout: SimTime,
    /// Re-issue interval of live pulls; one pessimistic round trip.
    pub live_retry_timeout: SimTime,
    pub leader_timeout: SimTime,
    /// A watermark attests a round-`r` quorum block's view of `v_j` when it
    /// is at least `r - watermark_lag`.
    pub watermark_lag: u64,
    /// Number of peers contacted per attempt by the uncertified random pull.
    pub random_pull_fanout: usize,
    /// Validators stop proposing after this round.
    pub max_round: u64,
    /// Starting reputation of every validator, indexed by validator.
    pub initial_reputation: Vec<i64>,
}

impl ProtocolConfig {
    /// Defaults for a committee of `n` with fault bound `f` and network
    /// bound `delta_bound`.
    pub fn new(n: usize, f: usize, delta_bound: SimTime) -> Result<Self, ConfigError> {
        let cfg = ProtocolConfig {
            n,
            f,
            reputation_penalty: 10_000,
            bulk_retry_timeout: SimTime(2 * delta_bound.0),
            live_retry_timeout: SimTime(2 * delta_bound.0),
            leader_timeout: SimTime::from_millis(1_000),
            watermark_lag: 1,
            random_pull_fanout: 2,
            max_round: u64::MAX,
            initial_reputation: vec![0; n],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Largest `f` tolerated by a committee of `n`.
    pub fn max_faults(n: usize) -> usize {
        n.saturating_sub(1) / 3
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::EmptyCommittee);
        }
        if self.n < 3 * self.f + 1 {
            return Err(ConfigError::TooManyFaults { n: self.n, f: self.f });
        }
        if self.reputation_penalty <= 0 {
            return Err(ConfigError::NonPositive("reputation_penalty"));
        }
        if self.bulk_retry_timeout.0 == 0 {
            return Err(ConfigError::NonPositive("bulk_retry_timeout"));
        }
        if self.live_retry_timeout.0 == 0 {
            return Err(ConfigError::NonPositive("live_retry_timeout"));
        }
        if self.leader_timeout.0 == 0 {
            return Err(ConfigError::NonPositive("leader_timeout"));
        }
        if self.random_pull_fanout == 0 {
            return Err(ConfigError::NonPositive("random_pull_fanout"));
        }
        if self.initial_reputation.len() != self.n {
            return Err(ConfigError::ReputationLength {
                expected: self.n,
                got: self.initial_reputation.len(),
            });
        }
        Ok(())
    }

    /// Strong quorum, `2f + 1`.
    pub fn quorum(&self) -> usize {
        2 * self.f + 1
    }

    /// Weak quorum, `f + 1`.
    pub fn weak_quorum(&self) -> usize {
        self.f + 1
    }
}
