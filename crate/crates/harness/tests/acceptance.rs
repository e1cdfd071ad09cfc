// SPDX-License-Identifier: Apache-2.0

//! Acceptance checks. Each test prints one PASS/FAIL line.

use std::{io::Write, path::PathBuf};

use blocksync_core::{
    adversary::AdversaryPolicy,
    messages::{MessageKind, PullMode},
    properties,
    simnet::{SchedulerPolicy, TraceRecord},
    sync::NodeEvent,
    SyncKind,
};
use blocksync_harness::{
    report::csv_string,
    runner::{replay, run_scenario, run_to_dir},
    scenario::{CrashSpec, DelaySpec},
    MetricsReport, ScenarioConfig,
};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const EPS: f64 = 0.25;
const R_L: i64 = 10_000;

/// Written to the stderr handle directly so the line shows without `--nocapture`.
fn verdict(id: u32, what: &str, failures: &[String], detail: String) {
    let mut line = format!("criterion {id} {}: {what} ({detail})\n", if failures.is_empty() { "PASS" } else { "FAIL" });
    for f in failures {
        line.push_str(&format!("    {f}\n"));
    }
    let _ = std::io::stderr().write_all(line.as_bytes());
    if !failures.is_empty() {
        panic!("criterion {id} failed: {}", failures.join("; "));
    }
}

fn scenario(name: &str) -> ScenarioConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    ScenarioConfig::from_toml(&std::fs::read_to_string(&p).unwrap()).unwrap()
}

fn run(cfg: &ScenarioConfig) -> MetricsReport {
    run_scenario(cfg).unwrap().report
}

fn fmt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.3}δ"))
}

#[test]
fn c01_optimistic_push_latency() {
    let mut fails = vec![];
    let mut detail = vec![];
    for n in [4, 10] {
        let r = run(&ScenarioConfig::uniform("optimistic", SyncKind::Hybrid, n, 100, 100));
        let m = r.mean_round_latency();
        detail.push(format!("n={n}: {}", fmt(m)));
        if r.round_latency.len() != 100 {
            fails.push(format!("n={n}: {} rounds completed", r.round_latency.len()));
        }
        match m {
            Some(m) if (1.0..=1.0 + EPS).contains(&m) => {}
            _ => fails.push(format!("n={n}: mean round latency {}", fmt(m))),
        }
    }
    verdict(1, "optimistic push latency in [1, 1.25]δ", &fails, detail.join(", "));
}

#[test]
fn c02_optimistic_consensus_latency() {
    let mut fails = vec![];
    let mut detail = vec![];
    for n in [4, 10] {
        let r = run(&ScenarioConfig::uniform("optimistic", SyncKind::Hybrid, n, 100, 100));
        let lat: Vec<f64> = r.committed_slots().map(|(_, l)| r.in_delta(l)).collect();
        if lat.is_empty() {
            fails.push(format!("n={n}: nothing committed"));
        }
        for (s, l) in r.committed_slots() {
            let d = r.in_delta(l);
            if !(3.0..=3.0 + EPS).contains(&d) {
                fails.push(format!("n={n}: slot {} at {d:.3}δ", s.round.0));
            }
        }
        let (lo, hi) = lat.iter().fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
        detail.push(format!("n={n}: {} slots in [{lo:.3}, {hi:.3}]δ, {} skipped", lat.len(), r.skipped_slots()));
    }
    verdict(2, "every committed slot in [3, 3.25]δ", &fails, detail.join(", "));
}

#[test]
fn c03_attack_on_uncertified_baseline() {
    let r = run(&scenario("pull_induction_uncertified.toml"));
    let mut fails = vec![];
    // Round 1 has only genesis parents, so there is nothing to induce a pull on.
    for (i, l) in r.round_latency.iter().enumerate().skip(1) {
        if r.in_delta(*l) < 3.0 {
            fails.push(format!("round {} took {:.3}δ", i + 1, r.in_delta(*l)));
        }
    }
    if r.steady_round_latency().is_none_or(|m| m < 3.0) {
        fails.push(format!("steady round latency {}", fmt(r.steady_round_latency())));
    }
    if r.mean_consensus_latency().is_none_or(|m| m < 9.0) {
        fails.push(format!("consensus latency {}", fmt(r.mean_consensus_latency())));
    }
    let detail = format!(
        "rounds 2..=100 all >= 3δ, round latency all rounds {} / from round {} {}, consensus {} / steady {}",
        fmt(r.mean_round_latency()),
        r.steady_from,
        fmt(r.steady_round_latency()),
        fmt(r.mean_consensus_latency()),
        fmt(r.steady_consensus_latency()),
    );
    verdict(3, "pull induction slows the uncertified baseline to >= 3δ rounds, >= 9δ commits", &fails, detail);
}

#[test]
fn c04_attack_on_hybrid() {
    let h = run(&scenario("pull_induction_hybrid.toml"));
    let b = run(&scenario("pull_induction_uncertified.toml"));
    let mut fails = vec![];
    if h.steady_round_latency().is_none_or(|m| m > 2.0 + EPS) {
        fails.push(format!("steady round latency {}", fmt(h.steady_round_latency())));
    }
    if h.steady_consensus_latency().is_none_or(|m| m > 6.0 + EPS) {
        fails.push(format!("steady consensus latency {}", fmt(h.steady_consensus_latency())));
    }
    let ratio = |a: Option<f64>, b: Option<f64>| a.zip(b).map_or("n/a".into(), |(a, b)| format!("{:.2}x", a / b));
    let detail = format!(
        "steady round {} consensus {} from round {}; baseline/hybrid round {} consensus {}",
        fmt(h.steady_round_latency()),
        fmt(h.steady_consensus_latency()),
        h.steady_from,
        ratio(b.steady_round_latency(), h.steady_round_latency()),
        ratio(b.steady_consensus_latency(), h.steady_consensus_latency()),
    );
    verdict(4, "hybrid under pull induction keeps steady rounds <= 2.25δ, commits <= 6.25δ", &fails, detail);
}

#[test]
fn c05_bounded_slow_rounds() {
    let f = 1usize;
    let results: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let adv0 = rng.gen_range(0..=2 * R_L);
            let mut cfg = ScenarioConfig::uniform("blame-bound", SyncKind::Hybrid, 4, 100, 100)
                .with_seed(seed)
                .fault(3, AdversaryPolicy::pull_induction());
            cfg.network.delays = DelaySpec::Random { min_ms: 90, max_ms: 110 };
            cfg.protocol.reputation_penalty = R_L;
            cfg.protocol.initial_reputation = Some(vec![0, 0, 0, adv0]);
            let r = run(&cfg);
            let bound = 1 + f + ((adv0 * f as i64) as f64 / R_L as f64).ceil() as usize;
            let worst = r.slow_rounds_per_window(2.0 + EPS, R_L as u64).into_iter().max().unwrap_or(0);
            (seed, adv0, worst, bound, r.round_latency.len())
        })
        .collect();
    let mut fails = vec![];
    for (seed, adv0, worst, bound, done) in &results {
        if worst > bound {
            fails.push(format!("seed {seed}: {worst} slow rounds, bound {bound} (adversary starts at {adv0})"));
        }
        if *done != 100 {
            fails.push(format!("seed {seed}: {done} rounds completed"));
        }
    }
    let max = results.iter().map(|r| r.2).max().unwrap_or(0);
    let tight = results.iter().filter(|r| r.2 == r.3).count();
    verdict(5, "slow rounds per window within the blame bound", &fails, format!("100 seeds, at most {max} slow rounds, {tight} seeds at the bound"));
}

#[test]
fn c06_no_honest_blame() {
    let results: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a3e);
            let n = if seed % 2 == 0 { 4 } else { 7 };
            let mut cfg = ScenarioConfig::uniform("no-honest-blame", SyncKind::Hybrid, n, 100, 50).with_seed(seed);
            cfg.network.delays = DelaySpec::Random { min_ms: 50, max_ms: 99 };
            if seed % 3 != 0 {
                let f = (n - 1) / 3;
                let mut ids: Vec<usize> = (0..n).collect();
                ids.shuffle(&mut rng);
                for v in ids.into_iter().take(rng.gen_range(1..=f)) {
                    cfg.crashes.push(CrashSpec { validator: v, at_ms: rng.gen_range(0..2000) });
                }
            }
            let run = run_scenario(&cfg).unwrap();
            let triangle = run.scenario.to_setup().unwrap().network.satisfies_triangle();
            (seed, run.report.honest_blames(), run.report.blames.len(), triangle, cfg.crashes.len())
        })
        .collect();
    let mut fails = vec![];
    for (seed, honest, _, triangle, _) in &results {
        if *honest > 0 {
            fails.push(format!("seed {seed}: {honest} blames against honest validators"));
        }
        if !triangle {
            fails.push(format!("seed {seed}: latency matrix violates the triangle inequality"));
        }
    }
    let blames: usize = results.iter().map(|r| r.2).sum();
    let crashy = results.iter().filter(|r| r.4 > 0).count();
    verdict(6, "no blame against honest validators", &fails, format!("100 seeds, {crashy} with crashes, {blames} blames in total"));
}

#[test]
fn c07_definition_properties() {
    let cases: Vec<(SyncKind, usize, u64)> =
        SyncKind::ALL.iter().flat_map(|k| [4usize, 7].into_iter().flat_map(move |n| (0..200u64).map(move |s| (*k, n, s)))).collect();
    let results: Vec<_> = cases
        .par_iter()
        .map(|(kind, n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) ^ *n as u64);
            let mut cfg = ScenarioConfig::uniform("definition", *kind, *n, 100, 15).with_seed(*seed);
            cfg.network.delays = DelaySpec::Random { min_ms: 20, max_ms: 100 };
            cfg.network.gst_ms = rng.gen_range(100..=1500);
            cfg.network.pre_gst = SchedulerPolicy::RandomPreGst;
            let f = (n - 1) / 3;
            let mut ids: Vec<usize> = (0..*n).collect();
            ids.shuffle(&mut rng);
            for v in ids.into_iter().take(rng.gen_range(0..=f)) {
                cfg.crashes.push(CrashSpec { validator: v, at_ms: rng.gen_range(0..3000) });
            }
            let out = run_scenario(&cfg);
            match out {
                Ok(run) => {
                    let p = run.scenario.protocol_config().unwrap();
                    properties::check_all(&run.output, &p).into_iter().map(|v| format!("{kind:?} n={n} seed {seed}: {v:?}")).collect()
                }
                Err(e) => vec![format!("{kind:?} n={n} seed {seed}: {e}")],
            }
        })
        .collect::<Vec<Vec<String>>>();
    let fails: Vec<String> = results.into_iter().flatten().collect();
    let shown: Vec<String> = fails.iter().take(20).cloned().collect();
    verdict(
        7,
        "round progression, termination, block and causal availability",
        &shown,
        format!("{} runs across 3 synchronizers, n in {{4, 7}}, {} violations", cases.len(), fails.len()),
    );
}

#[derive(Default)]
struct PullTally {
    events: usize,
    requests: usize,
}

#[test]
fn c08_pull_amplification() {
    let mut hoard = scenario("hoard_and_dump.toml");
    hoard.record_messages = true;
    let mut induced = scenario("pull_induction_hybrid.toml");
    induced.record_messages = true;
    let pre_gst = |kind: SyncKind, seed: u64| {
        let mut c = ScenarioConfig::uniform("pre-gst", kind, 7, 100, 30).with_seed(seed);
        c.network.delays = DelaySpec::Random { min_ms: 20, max_ms: 100 };
        c.network.gst_ms = 3000;
        c.network.pre_gst = SchedulerPolicy::RandomPreGst;
        c.record_messages = true;
        c
    };
    let mut configs = vec![hoard, induced];
    for seed in 0..4 {
        configs.push(pre_gst(SyncKind::Hybrid, seed));
        configs.push(pre_gst(SyncKind::Certified, seed));
    }

    let mut fails = vec![];
    let mut tally: std::collections::BTreeMap<PullMode, PullTally> = Default::default();
    for cfg in &configs {
        let run = run_scenario(cfg).unwrap();
        let n = cfg.n;
        let mut issued = 0;
        let mut wire = 0;
        for rec in &run.output.trace {
            match rec {
                TraceRecord::Node { node, event: NodeEvent::PullIssued { mode, targets, entries, signers }, .. } => {
                    issued += targets.len();
                    let t = tally.entry(*mode).or_default();
                    t.events += 1;
                    t.requests += targets.len();
                    let distinct = targets.iter().collect::<std::collections::BTreeSet<_>>().len() == targets.len();
                    if !distinct || targets.contains(node) {
                        fails.push(format!("{} seed {}: {mode:?} pull by {node:?} has bad targets {targets:?}", cfg.scenario_id, cfg.seed));
                    }
                    let ok = match mode {
                        PullMode::Bulk => targets.len() == 1 && entries.len() == 1,
                        PullMode::Live => targets.len() == n - 1 && !entries.is_empty(),
                        PullMode::Signers => Some(targets.len()) == *signers && entries.len() == 1,
                        PullMode::Random => true,
                    };
                    if !ok {
                        fails.push(format!(
                            "{} seed {}: {mode:?} pull with {} targets, {} entries, signers {signers:?}",
                            cfg.scenario_id,
                            cfg.seed,
                            targets.len(),
                            entries.len()
                        ));
                    }
                }
                TraceRecord::Deliver { msg: MessageKind::PullRequest, .. } => wire += 1,
                _ => {}
            }
        }
        if issued != wire {
            fails.push(format!("{} seed {}: {issued} requests issued, {wire} delivered", cfg.scenario_id, cfg.seed));
        }
    }
    for mode in [PullMode::Bulk, PullMode::Live, PullMode::Signers] {
        if tally.get(&mode).is_none_or(|t| t.events == 0) {
            fails.push(format!("no {mode:?} pulls observed"));
        }
    }
    let detail = tally
        .iter()
        .map(|(m, t)| format!("{m:?}: {} pulls, {} requests", t.events, t.requests))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(8, "bulk 1 request per block, live n-1 per flush, certified |signers| per block", &fails, detail);
}

fn random_scenario(rng: &mut ChaCha8Rng, i: usize) -> ScenarioConfig {
    let kind = *SyncKind::ALL.choose(rng).unwrap();
    let n = *[4usize, 7].choose(rng).unwrap();
    let mut cfg = ScenarioConfig::uniform(&format!("replay-{i}"), kind, n, 100, rng.gen_range(10..=30)).with_seed(rng.gen());
    if rng.gen_bool(0.5) {
        cfg.network.delays = DelaySpec::Random { min_ms: 40, max_ms: 100 };
    }
    if rng.gen_bool(0.3) {
        cfg.network.gst_ms = 800;
        cfg.network.pre_gst = SchedulerPolicy::RandomPreGst;
    }
    match rng.gen_range(0..4) {
        0 => cfg = cfg.fault(n - 1, AdversaryPolicy::pull_induction()),
        1 => cfg = cfg.fault(n - 1, AdversaryPolicy::HoardAndDump { hoard_rounds: 5 }),
        2 => cfg.crashes.push(CrashSpec { validator: 0, at_ms: rng.gen_range(0..1500) }),
        _ => {}
    }
    cfg
}

#[test]
fn c09_deterministic_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let dir = tempfile::tempdir().unwrap();
    let mut fails = vec![];
    let mut kinds = std::collections::BTreeSet::new();
    for i in 0..20 {
        let cfg = random_scenario(&mut rng, i);
        kinds.insert(cfg.synchronizer);
        let out = dir.path().join(format!("run{i}"));
        let (_, trace) = run_to_dir(&cfg, &out).unwrap();
        let written = std::fs::read(out.join("report.csv")).unwrap();
        let replayed = csv_string(&[replay(&trace).unwrap()]);
        if written != replayed.as_bytes() {
            fails.push(format!("{}: replayed CSV differs", cfg.scenario_id));
        }
        let again = run_to_dir(&cfg, &dir.path().join(format!("again{i}"))).unwrap();
        let rerun = std::fs::read(dir.path().join(format!("again{i}")).join("report.csv")).unwrap();
        if rerun != written || again.0.output.trace != run_scenario(&cfg).unwrap().output.trace {
            fails.push(format!("{}: rerun differs", cfg.scenario_id));
        }
    }
    verdict(9, "run, trace and replay give byte-identical CSV", &fails, format!("20 configurations over {} synchronizers", kinds.len()));
}

#[test]
fn c10_hoard_and_dump_recovery() {
    let cfg = scenario("hoard_and_dump.toml");
    let r = run(&cfg);
    let mut fails = vec![];
    let Some(h) = r.hoard.clone() else {
        verdict(10, "hoard-and-dump recovery", &["no dump observed".into()], String::new());
        return;
    };
    if h.live_entries != 0 {
        fails.push(format!("dumped blocks entered honest live sets {} times", h.live_entries));
    }
    let post: Vec<f64> =
        r.round_latency.iter().enumerate().filter(|(i, _)| *i as u64 + 1 >= h.first_post_dump_round).map(|(_, l)| r.in_delta(*l)).collect();
    let post_mean = post.iter().sum::<f64>() / post.len().max(1) as f64;
    if post.is_empty() || post_mean > 1.0 + EPS {
        fails.push(format!("post-dump mean round latency {post_mean:.3}δ over {} rounds", post.len()));
    }
    let limit = 3 * r.recovery_rounds;
    match h.parity_round {
        Some(p) if p.saturating_sub(h.dump_round) <= limit => {}
        p => fails.push(format!("committed-author parity at {p:?}, dump at round {}, limit {limit}", h.dump_round)),
    }
    let detail = format!(
        "n={}, dump at round {}, post-dump mean {post_mean:.3}δ, parity at round {:?}, {} live entries, leader of v{}: {} commits",
        r.n, h.dump_round, h.parity_round, h.live_entries, h.author.0, r.committed_authors[h.author.0]
    );
    verdict(10, "hoarded blocks stay out of live sets and rounds recover", &fails, detail);
}
