// SPDX-License-Identifier: Apache-2.0

use std::{
    fs::File,
    io::{stdout, BufWriter},
    ops::Range,
    path::{Path, PathBuf},
    process::ExitCode,
};

use anyhow::{anyhow, bail, Context, Result};
use blocksync_harness::{
    report, runner,
    runner::{check, run_to_dir},
    MetricsReport, ScenarioConfig,
};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blocksync", version, about = "Simulate block synchronizers and report latency metrics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trace and CSV report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Exit non-zero when a threshold in `[expect]` is violated.
        #[arg(long)]
        assert: bool,
    },
    /// Recompute the CSV report from a trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario over a half-open seed range, e.g. `0..100`.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_range)]
        seeds: Range<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        assert: bool,
    },
}

fn parse_range(s: &str) -> Result<Range<u64>> {
    let (a, b) = s.split_once("..").ok_or_else(|| anyhow!("expected a..b"))?;
    let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
    if a >= b {
        bail!("empty seed range {a}..{b}");
    }
    Ok(a..b)
}

fn load(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ScenarioConfig::from_toml(&text)?)
}

fn summary(r: &MetricsReport) -> String {
    let f = |x: Option<f64>| x.map_or("n/a".into(), |v| format!("{v:.3}δ"));
    format!(
        "{} seed {} [{}]: rounds {}/{}, round latency {} (steady {}), consensus {} (steady {}), {} skipped, {} blames ({} honest)",
        r.scenario_id,
        r.seed,
        r.synchronizer.name(),
        r.round_latency.len(),
        r.rounds_target,
        f(r.mean_round_latency()),
        f(r.steady_round_latency()),
        f(r.mean_consensus_latency()),
        f(r.steady_consensus_latency()),
        r.skipped_slots(),
        r.blames.len(),
        r.honest_blames(),
    )
}

fn main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run { config, seed, out, assert } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (run, trace) = run_to_dir(&cfg, &out)?;
            println!("{}", summary(&run.report));
            println!("trace: {}", trace.display());
            if assert {
                let violations = check(&run.report, &cfg.expect);
                for v in &violations {
                    eprintln!("FAIL {v}");
                }
                if !violations.is_empty() {
                    return Ok(ExitCode::FAILURE);
                }
            }
        }
        Cmd::Replay { trace, out } => {
            let r = runner::replay(&trace)?;
            match out {
                Some(p) => report::emit_csv(BufWriter::new(File::create(p)?), std::slice::from_ref(&r))?,
                None => report::emit_csv(stdout().lock(), std::slice::from_ref(&r))?,
            }
        }
        Cmd::Sweep { config, seeds, out, assert } => {
            let cfg = load(&config)?;
            let mut reports = vec![];
            let mut failed = false;
            for (seed, res) in runner::sweep(&cfg, seeds) {
                match res {
                    Ok(r) => {
                        eprintln!("{}", summary(&r));
                        if assert {
                            for v in check(&r, &cfg.expect) {
                                eprintln!("FAIL seed {seed}: {v}");
                                failed = true;
                            }
                        }
                        reports.push(r);
                    }
                    Err(e) => {
                        eprintln!("FAIL seed {seed}: {e}");
                        failed = true;
                    }
                }
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    report::emit_csv(BufWriter::new(File::create(dir.join("sweep.csv"))?), &reports)?;
                }
                None => report::emit_csv(stdout().lock(), &reports)?,
            }
            if failed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
