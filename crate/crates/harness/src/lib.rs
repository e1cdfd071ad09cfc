// SPDX-License-Identifier: Apache-2.0

//! Scenario runner for the block synchronizer simulator: loads scenario
//! files, runs them, derives metrics from the trace and writes CSV.

pub mod metrics;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod trace;

pub use metrics::MetricsReport;
pub use runner::{replay, run_scenario, sweep, RunError, ScenarioRun};
pub use scenario::ScenarioConfig;
