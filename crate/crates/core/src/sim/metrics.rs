//! Run metrics, computed only from the record lines of an event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cache::{CacheCounters, ServeOutcome};
use crate::registry::EndpointId;
use crate::sim::config::ScenarioKind;
use crate::sim::eventlog::{
    CacheTotalsRecord, CompletedRecord, EventLog, MpdAnalysedRecord, Requester, RunStartRecord, CACHE_TOTALS, COMPLETED, MPD_ANALYSED,
    PREFETCH_IDLE, RUN_START,
};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("event log has no {0} record")]
    Missing(&'static str),
    #[error("bad {kind} record: {source}")]
    Record { kind: String, source: serde_json::Error },
}

/// Mean, sample standard deviation and range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats::default();
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Stats { n, mean, stddev: var.sqrt(), min, max }
    }
}

/// Percentage of hits among hits and misses; 0 when nothing was served.
pub fn hit_ratio(hits: u64, misses: u64) -> f64 {
    if hits + misses == 0 {
        0.0
    } else {
        100.0 * hits as f64 / (hits + misses) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheMetrics {
    pub cache: EndpointId,
    pub label: String,
    /// Client requests served by this cache.
    pub hits: u64,
    pub misses: u64,
    pub hit_ratio: f64,
    /// Layers of the client's segment requests it served.
    pub layers: BTreeSet<u32>,
    /// Everything the cache logged, prefetcher requests included.
    pub log_counters: CacheCounters,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub requests: u64,
    pub hits: u64,
    pub misses: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub run: usize,
    pub seed: u64,
    /// Client requests, the manifest included.
    pub total: u64,
    pub hits: u64,
    pub misses: u64,
    pub failed: u64,
    pub hit_ratio: f64,
    /// Nearest cache first.
    pub per_cache: Vec<CacheMetrics>,
    pub per_layer: BTreeMap<u32, LayerMetrics>,
    /// Segment download times of the client, seconds.
    pub chunk_time_s: Stats,
    /// Proxy notification round trips, seconds.
    pub controller_s: Stats,
    pub max_connect_attempts: u32,
    pub initial_backoff_ms: f64,
    pub mpd_retrieved_ms: Option<f64>,
    pub mpd_analysed_ms: Option<f64>,
    pub first_hit_ms: Option<f64>,
    pub prefetch_completion_ms: Option<f64>,
    pub video_end_ms: Option<f64>,
    pub prefetch_requests: u64,
}

impl RunMetrics {
    pub fn from_log(log: &EventLog) -> Result<RunMetrics, MetricsError> {
        let mut start: Option<RunStartRecord> = None;
        let mut completed: Vec<(f64, CompletedRecord)> = Vec::new();
        let mut totals: BTreeMap<EndpointId, CacheTotalsRecord> = BTreeMap::new();
        let mut mpd_analysed_ms = None;
        let mut prefetch_completion_ms = None;
        for l in log.records() {
            let err = |source| MetricsError::Record { kind: l.kind.clone(), source };
            match l.kind.as_str() {
                RUN_START => start = Some(l.record().map_err(err)?),
                COMPLETED => completed.push((l.time_ms, l.record().map_err(err)?)),
                CACHE_TOTALS => {
                    let t: CacheTotalsRecord = l.record().map_err(err)?;
                    totals.insert(t.cache, t);
                }
                MPD_ANALYSED => {
                    let _: MpdAnalysedRecord = l.record().map_err(err)?;
                    mpd_analysed_ms.get_or_insert(l.time_ms);
                }
                PREFETCH_IDLE => prefetch_completion_ms = Some(l.time_ms),
                _ => {}
            }
        }
        let start = start.ok_or(MetricsError::Missing(RUN_START))?;

        let mut per_cache: Vec<CacheMetrics> = start
            .caches
            .iter()
            .map(|c| CacheMetrics {
                cache: c.cache,
                label: c.label.clone(),
                hits: 0,
                misses: 0,
                hit_ratio: 0.0,
                layers: BTreeSet::new(),
                log_counters: totals.get(&c.cache).map(|t| t.counters).unwrap_or_default(),
            })
            .collect();
        let mut m = RunMetrics {
            scenario: start.scenario.clone(),
            kind: start.kind,
            run: start.run,
            seed: start.seed,
            total: 0,
            hits: 0,
            misses: 0,
            failed: 0,
            hit_ratio: 0.0,
            per_cache: vec![],
            per_layer: BTreeMap::new(),
            chunk_time_s: Stats::default(),
            controller_s: Stats::default(),
            max_connect_attempts: 0,
            initial_backoff_ms: start.initial_backoff_ms,
            mpd_retrieved_ms: None,
            mpd_analysed_ms,
            first_hit_ms: None,
            prefetch_completion_ms,
            video_end_ms: None,
            prefetch_requests: 0,
        };
        let mut chunk = Vec::new();
        let mut ctl = Vec::new();
        for (time, c) in &completed {
            if let Some(v) = c.controller_ms {
                ctl.push(v / 1000.0);
            }
            m.max_connect_attempts = m.max_connect_attempts.max(c.connect_attempts);
            if c.requester == Requester::Prefetcher {
                m.prefetch_requests += 1;
                continue;
            }
            m.total += 1;
            if c.failed {
                m.failed += 1;
                continue;
            }
            let hit = c.result == Some(ServeOutcome::Hit);
            if hit {
                m.hits += 1;
                m.first_hit_ms.get_or_insert(*time);
            } else {
                m.misses += 1;
            }
            if let Some(pc) = c.cache.and_then(|id| per_cache.iter_mut().find(|p| p.cache == id)) {
                if hit {
                    pc.hits += 1;
                } else {
                    pc.misses += 1;
                }
                if let Some(r) = c.repr_id {
                    pc.layers.insert(r);
                }
            }
            match (c.repr_id, c.seg_no) {
                (Some(r), Some(_)) => {
                    let lm = m.per_layer.entry(r).or_default();
                    lm.requests += 1;
                    if hit {
                        lm.hits += 1;
                    } else {
                        lm.misses += 1;
                    }
                    chunk.push((time - c.issued_ms) / 1000.0);
                }
                _ => {
                    m.mpd_retrieved_ms.get_or_insert(*time);
                }
            }
        }
        for pc in &mut per_cache {
            pc.hit_ratio = hit_ratio(pc.hits, pc.misses);
        }
        m.per_cache = per_cache;
        m.hit_ratio = hit_ratio(m.hits, m.misses);
        m.chunk_time_s = Stats::of(&chunk);
        m.controller_s = Stats::of(&ctl);
        m.video_end_ms = m.mpd_retrieved_ms.map(|t| t + start.video_duration_ms);
        Ok(m)
    }

    pub fn cache(&self, label: &str) -> Option<&CacheMetrics> {
        self.per_cache.iter().find(|c| c.label == label)
    }
}

/// Runs of one scenario and their aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub runs: Vec<RunMetrics>,
}

impl ScenarioReport {
    pub fn hit_ratios(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.hit_ratio).collect()
    }

    pub fn hit_ratio(&self) -> Stats {
        Stats::of(&self.hit_ratios())
    }

    /// Chunk time stats over every segment of every run.
    pub fn chunk_time_s(&self) -> Stats {
        pooled(self.runs.iter().map(|r| r.chunk_time_s))
    }

    pub fn controller_s(&self) -> Stats {
        pooled(self.runs.iter().map(|r| r.controller_s))
    }
}

/// Combines per-run stats as if computed over the union of samples.
pub fn pooled(parts: impl IntoIterator<Item = Stats>) -> Stats {
    let parts: Vec<Stats> = parts.into_iter().filter(|s| s.n > 0).collect();
    let n: usize = parts.iter().map(|s| s.n).sum();
    if n == 0 {
        return Stats::default();
    }
    let mean = parts.iter().map(|s| s.mean * s.n as f64).sum::<f64>() / n as f64;
    let ss: f64 = parts
        .iter()
        .map(|s| s.stddev.powi(2) * (s.n as f64 - 1.0) + s.n as f64 * (s.mean - mean).powi(2))
        .sum();
    let stddev = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    Stats {
        n,
        mean,
        stddev,
        min: parts.iter().map(|s| s.min).fold(f64::INFINITY, f64::min),
        max: parts.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_match_hand_computation() {
        let s = Stats::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(s.n, 8);
        assert_eq!(s.mean, 5.0);
        assert!((s.stddev - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max), (2.0, 9.0));
        assert_eq!(Stats::of(&[]), Stats::default());
        assert_eq!(Stats::of(&[3.0]).stddev, 0.0);
    }

    #[test]
    fn pooling_equals_stats_of_the_union() {
        let a = [1.0, 2.5, 3.0];
        let b = [10.0, 0.5];
        let all: Vec<f64> = a.iter().chain(&b).copied().collect();
        let p = pooled([Stats::of(&a), Stats::of(&b), Stats::default()]);
        let u = Stats::of(&all);
        assert_eq!((p.n, p.min, p.max), (u.n, u.min, u.max));
        assert!((p.mean - u.mean).abs() < 1e-12);
        assert!((p.stddev - u.stddev).abs() < 1e-12);
    }

    #[test]
    fn hit_ratio_is_a_percentage() {
        assert_eq!(hit_ratio(0, 0), 0.0);
        assert_eq!(hit_ratio(3, 1), 75.0);
    }
}
