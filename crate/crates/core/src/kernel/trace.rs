use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StopReason;
use crate::bus::RouteId;
use crate::time::Micros;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Step,
    Deliver,
    Stop,
}

/// One trace line. Field order is the serialized key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub t_us: Micros,
    pub kind: RecordKind,
    pub component: String,
    pub port: Option<String>,
    pub value: Option<f64>,
    pub route_id: Option<RouteId>,
    pub seq: Option<u64>,
    pub reason: Option<String>,
    /// Send time of a delivered envelope. In memory only.
    #[serde(skip)]
    pub t_send_us: Option<Micros>,
}

impl TraceRecord {
    pub fn step(t_us: Micros, component: &str) -> Self {
        TraceRecord {
            t_us,
            kind: RecordKind::Step,
            component: component.to_string(),
            port: None,
            value: None,
            route_id: None,
            seq: None,
            reason: None,
            t_send_us: None,
        }
    }

    pub fn stop(t_us: Micros, component: &str, reason: StopReason) -> Self {
        TraceRecord {
            kind: RecordKind::Stop,
            reason: Some(reason.as_str().to_string()),
            ..TraceRecord::step(t_us, component)
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }

    /// Sort key used to compare traces written in different orders.
    pub fn order_key(&self) -> (Micros, Option<RouteId>, Option<u64>, &str) {
        (self.t_us, self.route_id, self.seq, &self.component)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub reason: StopReason,
    pub final_t_us: Micros,
    pub failure: Option<String>,
}

impl RunOutcome {
    pub fn completed(&self) -> bool {
        self.reason == StopReason::Completed
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub experiment_id: String,
    pub records: Vec<TraceRecord>,
    pub outcome: RunOutcome,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        records_to_jsonl(&self.records)
    }

    pub fn write_jsonl(&self, path: &Path) -> io::Result<()> {
        let mut out = io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            writeln!(out, "{}", r.to_line())?;
        }
        out.flush()
    }

    pub fn steps(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Step)
    }

    pub fn deliveries(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Deliver)
    }
}

pub fn records_to_jsonl(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

/// Reads a JSON Lines trace. Blank lines are skipped.
pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<TraceRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Stable sort by `(t_us, route_id, seq, component)`.
pub fn normalize(records: &mut [TraceRecord]) {
    records.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
}
