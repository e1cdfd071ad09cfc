// SPDX-License-Identifier: Apache-2.0

//! Newline-delimited JSON traces: a header line carrying the resolved
//! scenario, one line per record, and an end line with the record count.

use std::io::{BufRead, Write};

use blocksync_core::simnet::TraceRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::ScenarioConfig;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace is empty")]
    Empty,
    #[error("bad header: {0}")]
    Header(serde_json::Error),
    #[error("unsupported trace version {0}")]
    Version(u32),
    #[error("line {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
    #[error("trace is truncated after {records} records")]
    Truncated { records: usize },
    #[error("end line claims {claimed} records, found {found}")]
    CountMismatch { claimed: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    version: u32,
    scenario: ScenarioConfig,
}

#[derive(Serialize, Deserialize)]
struct EndLine {
    end: usize,
}

pub fn write_trace<W: Write>(mut w: W, scenario: &ScenarioConfig, records: &[TraceRecord]) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, &HeaderLine { version: TRACE_VERSION, scenario: scenario.clone() })?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(&mut w, &EndLine { end: records.len() })?;
    w.write_all(b"\n")?;
    w.flush()
}

pub fn read_trace<R: BufRead>(r: R) -> Result<(ScenarioConfig, Vec<TraceRecord>), ReplayError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(ReplayError::Empty)??;
    let header: HeaderLine = serde_json::from_str(&first).map_err(ReplayError::Header)?;
    if header.version != TRACE_VERSION {
        return Err(ReplayError::Version(header.version));
    }
    let mut records = vec![];
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.starts_with("{\"end\"") {
            let end: EndLine = serde_json::from_str(&line).map_err(|e| ReplayError::Record { line: k + 2, source: e })?;
            if end.end != records.len() {
                return Err(ReplayError::CountMismatch { claimed: end.end, found: records.len() });
            }
            return Ok((header.scenario, records));
        }
        match serde_json::from_str(&line) {
            Ok(rec) => records.push(rec),
            // A cut inside the last line shows up as a parse failure at EOF.
            Err(e) if e.is_eof() => return Err(ReplayError::Truncated { records: records.len() }),
            Err(e) => return Err(ReplayError::Record { line: k + 2, source: e }),
        }
    }
    Err(ReplayError::Truncated { records: records.len() })
}
