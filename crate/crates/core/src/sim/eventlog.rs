//! Raw event log: one line per event, `time<TAB>ordinal<TAB>kind<TAB>json`.
//!
//! Trace kinds describe the event pipeline; record kinds carry everything
//! metrics are computed from, so a saved log reproduces the report.

use std::io::{self, BufRead, Write};
use std::net::Ipv4Addr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cache::{CacheCounters, ServeOutcome};
use crate::prefetch::PrefetcherStats;
use crate::registry::EndpointId;
use crate::sim::config::ScenarioKind;

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventLine {
    pub time_ms: f64,
    pub ordinal: u64,
    pub kind: String,
    pub payload: Value,
}

impl EventLine {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.time_ms, self.ordinal, self.kind, self.payload)
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self, LogError> {
        let bad = |msg: &str| LogError::Malformed { line: line_no, msg: msg.to_string() };
        let mut parts = line.splitn(4, '\t');
        let time_ms = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad time"))?;
        let ordinal = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad ordinal"))?;
        let kind = parts.next().filter(|s| !s.is_empty()).ok_or_else(|| bad("missing kind"))?.to_string();
        let payload = serde_json::from_str(parts.next().ok_or_else(|| bad("missing payload"))?).map_err(|e| bad(&e.to_string()))?;
        Ok(EventLine { time_ms, ordinal, kind, payload })
    }

    /// Decodes the payload of a record line.
    pub fn record<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        T::deserialize(&self.payload)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Requester {
    Client,
    Prefetcher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheLabel {
    pub cache: EndpointId,
    pub label: String,
}

pub const RUN_START: &str = "RunStart";
pub const COMPLETED: &str = "RequestCompleted";
pub const MPD_ANALYSED: &str = "MpdAnalysed";
pub const PREFETCH_IDLE: &str = "PrefetchIdle";
pub const CACHE_TOTALS: &str = "CacheTotals";
pub const RUN_END: &str = "RunEnd";

const RECORD_KINDS: [&str; 6] = [RUN_START, COMPLETED, MPD_ANALYSED, PREFETCH_IDLE, CACHE_TOTALS, RUN_END];

pub fn is_record_kind(kind: &str) -> bool {
    RECORD_KINDS.contains(&kind)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStartRecord {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub run: usize,
    pub seed: u64,
    pub client: Ipv4Addr,
    /// Nearest cache first.
    pub caches: Vec<CacheLabel>,
    pub video_duration_ms: f64,
    pub initial_backoff_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletedRecord {
    pub req: u64,
    pub requester: Requester,
    pub url: String,
    #[serde(default)]
    pub repr_id: Option<u32>,
    #[serde(default)]
    pub seg_no: Option<u32>,
    /// Cache that served it; `None` when it bypassed caching.
    #[serde(default)]
    pub cache: Option<EndpointId>,
    #[serde(default)]
    pub result: Option<ServeOutcome>,
    pub bytes: u64,
    pub issued_ms: f64,
    /// Proxy notification to steering answer.
    #[serde(default)]
    pub controller_ms: Option<f64>,
    pub connect_attempts: u32,
    /// Closed without delivering content.
    pub failed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpdAnalysedRecord {
    pub url: String,
    pub representations: usize,
    pub segments: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefetchIdleRecord {
    pub stats: PrefetcherStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheTotalsRecord {
    pub cache: EndpointId,
    pub label: String,
    pub counters: CacheCounters,
    pub stored_objects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEndRecord {
    pub events: u64,
    pub refused_connections: u64,
}

/// Event log of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    lines: Vec<EventLine>,
    keep_trace: bool,
}

impl EventLog {
    pub fn new(keep_trace: bool) -> Self {
        EventLog { lines: Vec::new(), keep_trace }
    }

    pub fn from_lines(lines: Vec<EventLine>) -> Self {
        EventLog { lines, keep_trace: true }
    }

    pub fn trace(&mut self, time_ms: f64, ordinal: u64, kind: &str, payload: Value) {
        if self.keep_trace {
            self.lines.push(EventLine { time_ms, ordinal, kind: kind.to_string(), payload });
        }
    }

    pub fn record<T: Serialize>(&mut self, time_ms: f64, ordinal: u64, kind: &str, payload: &T) {
        debug_assert!(is_record_kind(kind));
        let payload = serde_json::to_value(payload).expect("record serializes");
        self.lines.push(EventLine { time_ms, ordinal, kind: kind.to_string(), payload });
    }

    pub fn lines(&self) -> &[EventLine] {
        &self.lines
    }

    pub fn records(&self) -> impl Iterator<Item = &EventLine> {
        self.lines.iter().filter(|l| is_record_kind(&l.kind))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for l in &self.lines {
            writeln!(w, "{}", l.to_line())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut lines = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            lines.push(EventLine::parse(&line, i + 1)?);
        }
        Ok(EventLog::from_lines(lines))
    }
}
