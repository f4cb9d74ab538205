//! CSV tables and the text summary.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::sim::config::ScenarioKind;
use crate::sim::metrics::{ScenarioReport, Stats};

fn ratio(x: f64) -> String {
    format!("{x:.4}")
}

/// Per-run hit table. The distributed variant carries per-cache columns,
/// farthest cache first.
pub fn write_csv<W: Write>(report: &ScenarioReport, w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let distributed = report.kind == ScenarioKind::DistributedPrefetch;
    let mut header = vec!["case".to_string(), "total".into(), "hit".into(), "miss".into(), "hit_ratio".into()];
    let caches = report.runs.first().map(|r| r.per_cache.len()).unwrap_or(2);
    if distributed {
        for i in (1..=caches.max(2)).rev() {
            header.extend([format!("hit_c{i}"), format!("miss_c{i}"), format!("ratio_c{i}")]);
        }
    }
    out.write_record(&header)?;
    for (i, r) in report.runs.iter().enumerate() {
        let mut row = vec![format!("{:02}", i + 1), r.total.to_string(), r.hits.to_string(), r.misses.to_string(), ratio(r.hit_ratio)];
        if distributed {
            for c in (0..caches.max(2)).rev() {
                let (h, m, x) = r.per_cache.get(c).map(|pc| (pc.hits, pc.misses, pc.hit_ratio)).unwrap_or((0, 0, 0.0));
                row.extend([h.to_string(), m.to_string(), ratio(x)]);
            }
        }
        out.write_record(&row)?;
    }
    out.flush()
}

pub fn csv_string(report: &ScenarioReport) -> String {
    let mut buf = Vec::new();
    write_csv(report, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn stats_row(out: &mut String, label: &str, s: &Stats) {
    let _ = writeln!(out, "{label:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", s.mean, s.stddev, s.min, s.max);
}

/// Text block over any set of scenarios: controller interaction per cached
/// case, chunk download times, and hit ratios.
pub fn summary(reports: &[ScenarioReport]) -> String {
    let by_kind = |k: ScenarioKind| reports.iter().find(|r| r.kind == k);
    let mut out = String::new();
    out.push_str("Controller round trip per proxy notification (s)\n");
    let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9} {:>9}", "CASE", "MEAN CTRL", "STDDEV", "MIN", "MAX");
    for k in [ScenarioKind::EmptyCache, ScenarioKind::FullCache, ScenarioKind::Prefetch, ScenarioKind::DistributedPrefetch] {
        if let Some(r) = by_kind(k) {
            stats_row(&mut out, k.label(), &r.controller_s());
        }
    }
    out.push_str("\nChunk download time (s)\n");
    let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9} {:>9}", "CASE", "MEAN", "STDDEV", "MIN", "MAX");
    for k in ScenarioKind::ALL {
        if let Some(r) = by_kind(k) {
            stats_row(&mut out, k.label(), &r.chunk_time_s());
        }
    }
    out.push_str("\nHit ratio over runs (%)\n");
    let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9} {:>9} {:>6}", "CASE", "MEAN", "STDDEV", "MIN", "MAX", "RUNS");
    for k in ScenarioKind::ALL {
        if let Some(r) = by_kind(k) {
            let s = r.hit_ratio();
            let _ = writeln!(out, "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>6}", k.label(), s.mean, s.stddev, s.min, s.max, r.runs.len());
        }
    }
    let timelines: Vec<_> = reports
        .iter()
        .flat_map(|r| r.runs.iter())
        .filter(|m| m.prefetch_completion_ms.is_some())
        .collect();
    if !timelines.is_empty() {
        out.push_str("\nPrefetch timeline (s)\n");
        let _ = writeln!(out, "{:<12} {:>4} {:>9} {:>9} {:>9} {:>9}", "CASE", "RUN", "MPD", "FIRST HIT", "PREFETCH", "VIDEO END");
        let secs = |t: Option<f64>| t.map(|v| format!("{:.3}", v / 1000.0)).unwrap_or_else(|| "-".into());
        for m in timelines {
            let _ = writeln!(
                out,
                "{:<12} {:>4} {:>9} {:>9} {:>9} {:>9}",
                m.kind.label(),
                format!("{:02}", m.run + 1),
                secs(m.mpd_retrieved_ms),
                secs(m.first_hit_ms),
                secs(m.prefetch_completion_ms),
                secs(m.video_end_ms)
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::metrics::RunMetrics;
    use std::collections::BTreeMap;

    fn run(hits: u64, misses: u64) -> RunMetrics {
        RunMetrics {
            scenario: "t".into(),
            kind: ScenarioKind::FullCache,
            run: 0,
            seed: 1,
            total: hits + misses,
            hits,
            misses,
            failed: 0,
            hit_ratio: crate::sim::metrics::hit_ratio(hits, misses),
            per_cache: vec![],
            per_layer: BTreeMap::new(),
            chunk_time_s: Stats::default(),
            controller_s: Stats::default(),
            max_connect_attempts: 1,
            initial_backoff_ms: 10.0,
            mpd_retrieved_ms: None,
            mpd_analysed_ms: None,
            first_hit_ms: None,
            prefetch_completion_ms: None,
            video_end_ms: None,
            prefetch_requests: 0,
        }
    }

    #[test]
    fn rows_use_four_decimals() {
        let rep = ScenarioReport { scenario: "t".into(), kind: ScenarioKind::FullCache, runs: vec![run(1742, 53)] };
        assert_eq!(csv_string(&rep), "case,total,hit,miss,hit_ratio\n01,1795,1742,53,97.0474\n");
    }

    #[test]
    fn empty_report_is_header_only() {
        let rep = ScenarioReport { scenario: "t".into(), kind: ScenarioKind::FullCache, runs: vec![] };
        assert_eq!(csv_string(&rep), "case,total,hit,miss,hit_ratio\n");
        let rep = ScenarioReport { scenario: "t".into(), kind: ScenarioKind::DistributedPrefetch, runs: vec![] };
        assert_eq!(csv_string(&rep), "case,total,hit,miss,hit_ratio,hit_c2,miss_c2,ratio_c2,hit_c1,miss_c1,ratio_c1\n");
    }

    #[test]
    fn summary_lists_the_cached_cases() {
        let reports: Vec<ScenarioReport> = [ScenarioKind::EmptyCache, ScenarioKind::FullCache, ScenarioKind::Prefetch, ScenarioKind::DistributedPrefetch]
            .into_iter()
            .map(|kind| ScenarioReport { scenario: "t".into(), kind, runs: vec![] })
            .collect();
        let text = summary(&reports);
        let rows: Vec<&str> = text.lines().skip(2).take(4).map(|l| l[..12].trim_end()).collect();
        assert_eq!(rows, ["CACHE EMPTY", "CACHE FULL", "PREFETCHER", "DISTRIBUTED"]);
    }
}
