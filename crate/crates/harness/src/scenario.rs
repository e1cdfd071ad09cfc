// SPDX-License-Identifier: Apache-2.0

//! Scenario files. A scenario fixes the committee, the synchronizer, the
//! network and every fault; together with a seed it determines a run.

use blocksync_core::{
    adversary::AdversaryPolicy,
    config::{ConfigError, ProtocolConfig},
    simnet::{Control, NetworkError, NetworkModel, SchedulerPolicy, SimSetup},
    SimTime, SyncKind, ValidatorId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("fault for validator {0} outside the committee")]
    UnknownValidator(usize),
    #[error("validator {0} has more than one fault")]
    DuplicateFault(usize),
    #[error("random delays need 0 < min_ms <= max_ms")]
    RandomRange,
}

/// How base latencies are chosen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelaySpec {
    Uniform { delta_ms: u64 },
    Matrix { ms: Vec<Vec<u64>> },
    /// Independent per pair, uniform in `[min_ms, max_ms]`, drawn from
    /// the scenario seed. `max_ms < 2 * min_ms` gives a metric.
    Random { min_ms: u64, max_ms: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub delays: DelaySpec,
    /// Latency unit reports are expressed in. Defaults to the largest
    /// base latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_ms: Option<u64>,
    /// Post-GST delivery bound. Defaults to the largest base latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_ms: Option<u64>,
    #[serde(default)]
    pub gst_ms: u64,
    #[serde(default)]
    pub pre_gst: SchedulerPolicy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    /// Reputation penalty per blame.
    #[serde(default = "default_penalty")]
    pub reputation_penalty: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bulk_retry_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub live_retry_ms: Option<u64>,
    #[serde(default = "default_leader_timeout")]
    pub leader_timeout_ms: u64,
    #[serde(default = "one")]
    pub watermark_lag: u64,
    #[serde(default = "two")]
    pub random_pull_fanout: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_reputation: Option<Vec<i64>>,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec {
            reputation_penalty: default_penalty(),
            bulk_retry_ms: None,
            live_retry_ms: None,
            leader_timeout_ms: default_leader_timeout(),
            watermark_lag: 1,
            random_pull_fanout: 2,
            initial_reputation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub validator: usize,
    pub policy: AdversaryPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub validator: usize,
    pub at_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    /// Rounds left out of steady-state means.
    #[serde(default = "ten")]
    pub warmup_rounds: u64,
    /// Window, in rounds, for the committed-author parity check.
    #[serde(default = "ten")]
    pub recovery_rounds: u64,
    /// Tolerance in multiples of δ.
    #[serde(default = "quarter")]
    pub epsilon: f64,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        MetricsSpec { warmup_rounds: 10, recovery_rounds: 10, epsilon: 0.25 }
    }
}

/// Thresholds checked by `--assert`, in multiples of δ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_round_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_round_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steady_round_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_consensus_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_consensus_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steady_consensus_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_honest_blames: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub synchronizer: SyncKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<usize>,
    pub rounds_target: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon_ms: u64,
    /// Record every message delivery in the trace.
    #[serde(default)]
    pub record_messages: bool,
    pub network: NetworkSpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub expect: Expectations,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub crashes: Vec<CrashSpec>,
}

fn default_penalty() -> i64 {
    10_000
}
fn default_leader_timeout() -> u64 {
    1_000
}
fn default_horizon() -> u64 {
    3_600_000
}
fn one() -> u64 {
    1
}
fn two() -> usize {
    2
}
fn ten() -> u64 {
    10
}
fn quarter() -> f64 {
    0.25
}

impl ScenarioConfig {
    pub fn from_toml(s: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// A fault-free scenario on a uniform network.
    pub fn uniform(id: &str, kind: SyncKind, n: usize, delta_ms: u64, rounds: u64) -> Self {
        ScenarioConfig {
            scenario_id: id.into(),
            synchronizer: kind,
            n,
            f: None,
            rounds_target: rounds,
            seed: 0,
            horizon_ms: default_horizon(),
            record_messages: false,
            network: NetworkSpec {
                delays: DelaySpec::Uniform { delta_ms },
                delta_ms: None,
                bound_ms: None,
                gst_ms: 0,
                pre_gst: SchedulerPolicy::Synchronous,
            },
            protocol: ProtocolSpec::default(),
            metrics: MetricsSpec::default(),
            expect: Expectations::default(),
            faults: vec![],
            crashes: vec![],
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn fault(mut self, validator: usize, policy: AdversaryPolicy) -> Self {
        self.faults.push(FaultSpec { validator, policy });
        self
    }

    /// Base latency matrix in milliseconds.
    pub fn matrix_ms(&self) -> Result<Vec<Vec<u64>>, ScenarioError> {
        let n = self.n;
        Ok(match &self.network.delays {
            DelaySpec::Uniform { delta_ms } => vec![vec![*delta_ms; n]; n],
            DelaySpec::Matrix { ms } => ms.clone(),
            DelaySpec::Random { min_ms, max_ms } => {
                if *min_ms == 0 || min_ms > max_ms {
                    return Err(ScenarioError::RandomRange);
                }
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6e65_7477_6f72_6b00);
                let mut m = vec![vec![0; n]; n];
                for (i, row) in m.iter_mut().enumerate() {
                    for (j, d) in row.iter_mut().enumerate() {
                        if i != j {
                            *d = rng.gen_range(*min_ms..=*max_ms);
                        }
                    }
                }
                m
            }
        })
    }

    fn largest_latency(&self, m: &[Vec<u64>]) -> u64 {
        m.iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, d)| *d))
            .max()
            .unwrap_or(1)
    }

    /// Fills every defaulted field with its concrete value.
    pub fn resolved(&self) -> Result<Self, ScenarioError> {
        let mut c = self.clone();
        let m = self.matrix_ms()?;
        let largest = self.largest_latency(&m);
        c.f.get_or_insert(ProtocolConfig::max_faults(self.n));
        c.network.delta_ms.get_or_insert(largest);
        let bound = *c.network.bound_ms.get_or_insert(largest);
        c.protocol.bulk_retry_ms.get_or_insert(2 * bound);
        c.protocol.live_retry_ms.get_or_insert(2 * bound);
        c.protocol.initial_reputation.get_or_insert_with(|| vec![0; self.n]);
        Ok(c)
    }

    pub fn delta(&self) -> SimTime {
        let largest = self.matrix_ms().map(|m| self.largest_latency(&m)).unwrap_or(1);
        SimTime::from_millis(self.network.delta_ms.unwrap_or(largest))
    }

    pub fn protocol_config(&self) -> Result<ProtocolConfig, ScenarioError> {
        let c = self.resolved()?;
        let mut p = ProtocolConfig::new(c.n, c.f.unwrap_or_default(), SimTime::from_millis(c.network.bound_ms.unwrap_or(1)))?;
        p.reputation_penalty = c.protocol.reputation_penalty;
        p.bulk_retry_timeout = SimTime::from_millis(c.protocol.bulk_retry_ms.unwrap_or_default());
        p.live_retry_timeout = SimTime::from_millis(c.protocol.live_retry_ms.unwrap_or_default());
        p.leader_timeout = SimTime::from_millis(c.protocol.leader_timeout_ms);
        p.watermark_lag = c.protocol.watermark_lag;
        p.random_pull_fanout = c.protocol.random_pull_fanout;
        p.initial_reputation = c.protocol.initial_reputation.clone().unwrap_or_default();
        p.max_round = c.rounds_target;
        p.validate()?;
        Ok(p)
    }

    /// Per-validator policies; a timed crash counts as a fault.
    pub fn policies(&self) -> Result<Vec<AdversaryPolicy>, ScenarioError> {
        let mut policies = vec![AdversaryPolicy::Honest; self.n];
        let mut seen = vec![false; self.n];
        for f in &self.faults {
            let slot = seen.get_mut(f.validator).ok_or(ScenarioError::UnknownValidator(f.validator))?;
            if *slot {
                return Err(ScenarioError::DuplicateFault(f.validator));
            }
            *slot = true;
            policies[f.validator] = f.policy.clone();
        }
        for c in &self.crashes {
            let slot = seen.get_mut(c.validator).ok_or(ScenarioError::UnknownValidator(c.validator))?;
            if *slot {
                return Err(ScenarioError::DuplicateFault(c.validator));
            }
            *slot = true;
        }
        Ok(policies)
    }

    /// Validators that are never faulty.
    pub fn honest(&self) -> Vec<bool> {
        let mut h = vec![true; self.n];
        for f in &self.faults {
            if let Some(x) = h.get_mut(f.validator) {
                *x = f.policy.is_honest();
            }
        }
        for c in &self.crashes {
            if let Some(x) = h.get_mut(c.validator) {
                *x = false;
            }
        }
        h
    }

    pub fn to_setup(&self) -> Result<SimSetup, ScenarioError> {
        let c = self.resolved()?;
        let protocol = c.protocol_config()?;
        let m = c.matrix_ms()?;
        let network = NetworkModel {
            delays: m.iter().map(|row| row.iter().map(|d| SimTime::from_millis(*d)).collect()).collect(),
            delta_bound: SimTime::from_millis(c.network.bound_ms.unwrap_or(1)),
            gst: SimTime::from_millis(c.network.gst_ms),
            policy: c.network.pre_gst,
        };
        network.validate(c.n)?;
        let mut setup = SimSetup::new(protocol, c.synchronizer, network, c.seed);
        setup.policies = c.policies()?;
        setup.controls = c
            .crashes
            .iter()
            .map(|x| (SimTime::from_millis(x.at_ms), Control::Crash { node: ValidatorId(x.validator) }))
            .collect();
        setup.horizon = SimTime::from_millis(c.horizon_ms);
        setup.record_messages = c.record_messages;
        Ok(setup)
    }
}
