// SPDX-License-Identifier: Apache-2.0

use std::{
    fs::File,
    io::{BufReader, BufWriter},
    ops::Range,
    path::{Path, PathBuf},
};

use blocksync_core::simnet::{self, RunOutput, SimError};
use rayon::prelude::*;
use thiserror::Error;

use crate::{
    metrics::{compute, MetricsReport},
    report,
    scenario::{Expectations, ScenarioConfig, ScenarioError},
    trace::{read_trace, write_trace, ReplayError},
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub struct ScenarioRun {
    /// The scenario with every default filled in.
    pub scenario: ScenarioConfig,
    pub output: RunOutput,
    pub report: MetricsReport,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun, RunError> {
    let scenario = cfg.resolved()?;
    let output = simnet::run(scenario.to_setup()?)?;
    let report = compute(&scenario, &output.trace);
    Ok(ScenarioRun { scenario, output, report })
}

/// Runs and writes `trace.jsonl` and `report.csv` under `dir`.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<(ScenarioRun, PathBuf), RunError> {
    let run = run_scenario(cfg)?;
    std::fs::create_dir_all(dir)?;
    let trace_path = dir.join("trace.jsonl");
    write_trace(BufWriter::new(File::create(&trace_path)?), &run.scenario, &run.output.trace)?;
    report::emit_csv(BufWriter::new(File::create(dir.join("report.csv"))?), std::slice::from_ref(&run.report))?;
    Ok((run, trace_path))
}

pub fn replay(trace_path: &Path) -> Result<MetricsReport, ReplayError> {
    let (scenario, records) = read_trace(BufReader::new(File::open(trace_path)?))?;
    Ok(compute(&scenario, &records))
}

/// One run per seed, in parallel; results come back in seed order.
pub fn sweep(cfg: &ScenarioConfig, seeds: Range<u64>) -> Vec<(u64, Result<MetricsReport, RunError>)> {
    seeds
        .into_par_iter()
        .map(|seed| (seed, run_scenario(&cfg.clone().with_seed(seed)).map(|r| r.report)))
        .collect()
}

/// Violated thresholds, described.
pub fn check(report: &MetricsReport, expect: &Expectations) -> Vec<String> {
    let mut v = vec![];
    let mut bound = |name: &str, got: Option<f64>, limit: Option<f64>, upper: bool| {
        if let Some(limit) = limit {
            match got {
                Some(x) if (upper && x <= limit) || (!upper && x >= limit) => {}
                Some(x) => v.push(format!("{name} = {x:.3} violates {} {limit}", if upper { "<=" } else { ">=" })),
                None => v.push(format!("{name} unavailable")),
            }
        }
    };
    bound("mean_round_latency", report.mean_round_latency(), expect.min_round_latency, false);
    bound("mean_round_latency", report.mean_round_latency(), expect.max_round_latency, true);
    bound("steady_mean_round_latency", report.steady_round_latency(), expect.max_steady_round_latency, true);
    bound("mean_consensus_latency", report.mean_consensus_latency(), expect.min_consensus_latency, false);
    bound("mean_consensus_latency", report.mean_consensus_latency(), expect.max_consensus_latency, true);
    bound("steady_mean_consensus_latency", report.steady_consensus_latency(), expect.max_steady_consensus_latency, true);
    if let Some(max) = expect.max_honest_blames {
        let got = report.honest_blames() as u64;
        if got > max {
            v.push(format!("honest_blames = {got} exceeds {max}"));
        }
    }
    if report.round_latency.len() < report.rounds_target as usize {
        v.push(format!("only {} of {} rounds completed", report.round_latency.len(), report.rounds_target));
    }
    v
}
