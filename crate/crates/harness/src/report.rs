// SPDX-License-Identifier: Apache-2.0

//! CSV output: one metric per row.

use std::io::Write;

use crate::metrics::MetricsReport;

pub const HEADER: [&str; 8] = ["scenario_id", "seed", "synchronizer", "n", "f", "metric_name", "value", "unit"];

/// A single metric value.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub name: String,
    pub value: String,
    pub unit: &'static str,
}

fn row(name: impl Into<String>, value: impl ToString, unit: &'static str) -> Row {
    Row { name: name.into(), value: value.to_string(), unit }
}

fn ms(t: blocksync_core::SimTime) -> String {
    t.as_millis_f64().to_string()
}

/// Fixed precision keeps the output stable across platforms.
fn ratio(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".into(), |v| format!("{v:.6}"))
}

pub fn rows(r: &MetricsReport) -> Vec<Row> {
    let mut out = vec![row("delta", ms(r.delta), "ms"), row("rounds_completed", r.round_latency.len(), "count")];
    for (i, l) in r.round_latency.iter().enumerate() {
        out.push(row(format!("round_latency.r{}", i + 1), ms(*l), "ms"));
    }
    out.push(row("mean_round_latency", ratio(r.mean_round_latency()), "delta"));
    out.push(row("p50_round_latency", ratio(r.round_latency_percentile(50.0)), "delta"));
    out.push(row("p95_round_latency", ratio(r.round_latency_percentile(95.0)), "delta"));
    out.push(row("steady_from_round", r.steady_from, "round"));
    out.push(row("steady_mean_round_latency", ratio(r.steady_round_latency()), "delta"));
    for s in &r.slots {
        let v = s.latency.map_or_else(|| "skipped".into(), ms);
        out.push(row(format!("consensus_latency.s{}", s.round.0), v, "ms"));
    }
    out.push(row("mean_consensus_latency", ratio(r.mean_consensus_latency()), "delta"));
    out.push(row("steady_mean_consensus_latency", ratio(r.steady_consensus_latency()), "delta"));
    out.push(row("skipped_slots", r.skipped_slots(), "count"));
    for (mode, c) in &r.pulls {
        let m = format!("{mode:?}").to_lowercase();
        out.push(row(format!("pull_flushes.{m}"), c.flushes, "count"));
        out.push(row(format!("pull_requests.{m}"), c.requests, "count"));
        out.push(row(format!("pull_entries.{m}"), c.entries, "count"));
    }
    out.push(row("blames", r.blames.len(), "count"));
    out.push(row("honest_blames", r.honest_blames(), "count"));
    for b in &r.blames {
        out.push(row(format!("blame.v{}>v{}.r{}", b.by.0, b.target.0, b.round.0), ms(b.t), "ms"));
    }
    for (round, rep) in &r.reputation {
        for (j, v) in rep.iter().enumerate() {
            out.push(row(format!("reputation.r{}.v{j}", round.0), v, "score"));
        }
    }
    for (j, c) in r.committed_authors.iter().enumerate() {
        out.push(row(format!("committed_author.v{j}"), c, "count"));
    }
    if let Some(h) = &r.hoard {
        out.push(row("hoard.dump_time", ms(h.dump_time), "ms"));
        out.push(row("hoard.dump_round", h.dump_round, "round"));
        out.push(row("hoard.live_entries", h.live_entries, "count"));
        out.push(row("hoard.first_post_dump_round", h.first_post_dump_round, "round"));
        out.push(row("hoard.parity_round", h.parity_round.map_or_else(|| "none".into(), |p| p.to_string()), "round"));
    }
    out
}

pub fn write_header<W: Write>(w: &mut csv::Writer<W>) -> csv::Result<()> {
    w.write_record(HEADER)
}

pub fn write_rows<W: Write>(w: &mut csv::Writer<W>, r: &MetricsReport) -> csv::Result<()> {
    let prefix = [r.scenario_id.clone(), r.seed.to_string(), r.synchronizer.name().to_string(), r.n.to_string(), r.f.to_string()];
    for m in rows(r) {
        w.write_record(prefix.iter().map(String::as_str).chain([m.name.as_str(), m.value.as_str(), m.unit]))?;
    }
    Ok(())
}

/// Writes `reports` as one CSV document.
pub fn emit_csv<W: Write>(out: W, reports: &[MetricsReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    write_header(&mut w)?;
    for r in reports {
        write_rows(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(reports: &[MetricsReport]) -> String {
    let mut buf = vec![];
    emit_csv(&mut buf, reports).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}
