//! Scenario runner behavior observed through its event logs and metrics.

use std::collections::BTreeSet;

use proptest::prelude::*;

use icnaas::sim::eventlog::{CompletedRecord, Requester, COMPLETED};
use icnaas::sim::{EventLog, EventQueue, RunMetrics, Scenario, ScenarioConfig, ScenarioKind};

fn config(kind: ScenarioKind, runs: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig { kind, ..ScenarioConfig::default() };
    cfg.override_runs(runs, Some(11));
    cfg
}

fn completed(log: &EventLog) -> Vec<CompletedRecord> {
    log.records().filter(|l| l.kind == COMPLETED).map(|l| l.record().unwrap()).collect()
}

#[test]
fn events_are_logged_in_time_then_ordinal_order() {
    let sc = Scenario::new(config(ScenarioKind::Prefetch, 1)).unwrap();
    let out = sc.run(0, 3).unwrap();
    let lines = out.log.lines();
    assert!(lines.len() > 10_000);
    // several lines may come from one event and share its ordinal
    for w in lines.windows(2) {
        let ordered = w[0].time_ms < w[1].time_ms || (w[0].time_ms == w[1].time_ms && w[0].ordinal <= w[1].ordinal);
        assert!(ordered, "{:?} then {:?}", w[0], w[1]);
    }
    let ordinals: BTreeSet<u64> = lines.iter().map(|l| l.ordinal).collect();
    assert!(ordinals.len() > lines.len() / 2);
}

#[test]
fn saved_logs_reproduce_the_metrics() {
    let sc = Scenario::new(config(ScenarioKind::DistributedPrefetch, 1)).unwrap();
    let out = sc.run(0, 5).unwrap();
    let mut buf = Vec::new();
    out.log.write_to(&mut buf).unwrap();
    let back = EventLog::read_from(&buf[..]).unwrap();
    assert_eq!(RunMetrics::from_log(&back).unwrap(), out.metrics);
}

#[test]
fn direct_bypasses_every_cache() {
    let sc = Scenario::new(config(ScenarioKind::Direct, 1)).unwrap();
    let out = sc.run(0, 1).unwrap();
    assert_eq!(out.metrics.total, 1795);
    assert!(out.metrics.per_cache.is_empty());
    assert!(completed(&out.log).iter().all(|c| c.cache.is_none() && c.controller_ms.is_none()));
}

#[test]
fn empty_cache_misses_everything_once() {
    let mut cfg = config(ScenarioKind::EmptyCache, 2);
    cfg.cache.admission_failure_rate = 0.0;
    let sc = Scenario::new(cfg).unwrap();
    for out in sc.run_all().unwrap() {
        // each object is requested once per run, and runs start cold
        assert_eq!((out.metrics.hits, out.metrics.misses), (0, 1795));
    }
}

#[test]
fn request_totals_are_constant_across_runs() {
    let sc = Scenario::new(config(ScenarioKind::Prefetch, 3)).unwrap();
    let runs = sc.run_all().unwrap();
    assert!(runs.iter().all(|r| r.metrics.total == sc.requests_per_run() as u64));
    // the prefetcher mirrors the client's segment requests
    assert!(runs.iter().all(|r| r.metrics.prefetch_requests == 1794));
}

#[test]
fn controller_answers_before_the_first_retry() {
    let mut all = Vec::new();
    for kind in [ScenarioKind::EmptyCache, ScenarioKind::FullCache, ScenarioKind::Prefetch, ScenarioKind::DistributedPrefetch] {
        let sc = Scenario::new(config(kind, 2)).unwrap();
        for out in sc.run_all().unwrap() {
            let ctl = out.metrics.controller_s;
            assert!(ctl.n > 0, "{kind}");
            assert!(ctl.max * 1000.0 < out.metrics.initial_backoff_ms, "{kind}: {ctl:?}");
            all.push(ctl.mean);
        }
    }
    assert!(all.iter().all(|m| (0.005..=0.015).contains(m)), "{all:?}");
}

#[test]
fn client_layers_are_requested_in_ascending_order() {
    let sc = Scenario::new(config(ScenarioKind::FullCache, 1)).unwrap();
    let out = sc.run(0, 2).unwrap();
    let seq: Vec<(u32, u32)> = completed(&out.log)
        .into_iter()
        .filter(|c| c.requester == Requester::Client)
        .filter_map(|c| Some((c.seg_no?, c.repr_id?)))
        .collect();
    let mut sorted = seq.clone();
    sorted.sort();
    assert_eq!(seq, sorted);
    assert_eq!(seq.len(), 1794);
}

#[test]
fn bad_representation_is_a_fixture_mismatch() {
    let mut cfg = config(ScenarioKind::Prefetch, 1);
    cfg.client.representation = 77;
    assert!(matches!(Scenario::new(cfg), Err(icnaas::sim::SimError::FixtureMismatch(77))));
}

proptest! {
    #[test]
    fn queue_pops_in_time_then_insertion_order(times in prop::collection::vec(0u32..50, 1..200)) {
        let mut q = EventQueue::new();
        for (i, t) in times.iter().enumerate() {
            q.schedule(*t as f64, i);
        }
        let mut popped = Vec::new();
        while let Some((t, _, i)) = q.pop() {
            prop_assert_eq!(t, q.now());
            popped.push((t, i));
        }
        let mut want: Vec<(f64, usize)> = times.iter().enumerate().map(|(i, t)| (*t as f64, i)).collect();
        want.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        prop_assert_eq!(popped, want);
    }

    #[test]
    fn past_events_run_now(first in 10u32..100, back in 1u32..10) {
        let mut q = EventQueue::new();
        q.schedule(first as f64, 0);
        q.pop().unwrap();
        q.schedule((first - back) as f64, 1);
        let (t, _, _) = q.pop().unwrap();
        prop_assert_eq!(t, first as f64);
    }
}
