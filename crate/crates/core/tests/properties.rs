//! Property tests against independent oracles: packet walks over random
//! fabrics, manifest closure against Floyd-Warshall, LRU against a list
//! model, and header rewrites.

use std::collections::{BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use proptest::prelude::*;

use icnaas::cache::{CacheState, Capacity, Lookup, ServeOutcome};
use icnaas::dash::fixture::SvcFixture;
use icnaas::dash::{parse_mpd, MpdError, UrlClass};
use icnaas::dataplane::{Action, Dpid, FlowMatch, FlowRule, Header};
use icnaas::net::MacAddr;
use icnaas::registry::EndpointId;

mod common;
use common::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn steered_sessions_are_transparent(f in fabric()) {
        check_transparency(&f)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn chain_equals_transitive_closure(d in dag()) {
        check_closure(&d)?;
    }

    #[test]
    fn back_edges_are_cycles(d in dag(), pick in any::<prop::sample::Index>()) {
        prop_assume!(d.ids.len() >= 2);
        let reach = floyd_warshall(&d);
        // an edge from j to i where i already reaches j closes a cycle
        let pairs: Vec<(usize, usize)> = (0..d.ids.len())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .filter(|(i, j)| reach[*i][*j])
            .collect();
        prop_assume!(!pairs.is_empty());
        let (i, j) = pairs[pick.index(pairs.len())];
        let res = parse_mpd("/v/a.mpd", dag_xml(&d, Some((j, i))).as_bytes());
        prop_assert!(matches!(res, Err(MpdError::CyclicDependency(_))), "{:?}", res.err());
    }

    #[test]
    fn segment_urls_are_a_bijection(d in dag()) {
        let m = parse_mpd("/v/a.mpd", dag_xml(&d, None).as_bytes()).unwrap();
        let mut seen = BTreeSet::new();
        for id in &d.ids {
            for seg in 1..=m.segment_count() as u32 {
                let url = m.segment_url(*id, seg).unwrap().to_string();
                prop_assert_eq!(m.classify_url(&url), UrlClass::Segment { repr_id: *id, seg_no: seg });
                prop_assert!(seen.insert(url));
            }
        }
        prop_assert_eq!(seen.len(), d.ids.len() * 4);
        prop_assert_eq!(m.classify_url("/v/a.mpd"), UrlClass::Mpd);
    }
}

#[test]
fn fixture_urls_are_a_bijection() {
    let f = SvcFixture::default();
    let m = parse_mpd(icnaas::dash::fixture::MPD_URL, f.to_xml().as_bytes()).unwrap();
    let mut seen = BTreeSet::new();
    for id in m.repr_ids() {
        for seg in 1..=m.segment_count() as u32 {
            let url = m.segment_url(id, seg).unwrap();
            assert_eq!(m.classify_url(url), UrlClass::Segment { repr_id: id, seg_no: seg });
            assert!(seen.insert(url.to_string()));
        }
    }
    assert_eq!(seen.len(), 50 * 299);
}

#[test]
fn fixture_chains_are_monotone() {
    let m = parse_mpd("/x.mpd", SvcFixture::default().to_xml().as_bytes()).unwrap();
    for id in m.repr_ids() {
        let chain = m.resolve_chain(id).unwrap();
        for dep in &chain {
            assert!(m.resolve_chain(*dep).unwrap().is_subset(&chain), "{id} via {dep}");
        }
        if id > 0 {
            // every layer sits above some lower layer in its own chain
            assert!(chain.iter().any(|d| *d < id));
        }
    }
}

// ---------- layer allocation, exhaustive ----------

#[test]
fn allocation_partitions_every_instance() {
    for r in 1..=64u32 {
        for n in 1..=r {
            let caches: Vec<EndpointId> = (0..n).map(|i| EndpointId(100 + i)).collect();
            let a = icnaas::prefetch::allocate_layers(icnaas::registry::InstanceId(1), r, &caches).unwrap();
            assert_eq!(a.boundaries.len(), n as usize);
            let mut next = 0;
            let sizes: Vec<u32> = a.boundaries.iter().map(|(_, rg)| rg.end - rg.start).collect();
            for (i, (cache, range)) in a.boundaries.iter().enumerate() {
                assert_eq!(*cache, caches[i], "nearest cache first");
                assert_eq!(range.start, next, "contiguous from zero");
                next = range.end;
                for layer in range.clone() {
                    assert_eq!(a.cache_for(layer), Some(*cache));
                }
            }
            assert_eq!(next, r);
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "R={r} N={n} sizes {sizes:?}");
            assert!(*lo >= 1);
            assert_eq!(a.repr_to_cache.len(), r as usize);
        }
    }
}

// ---------- LRU against a list model ----------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lru_matches_a_recency_list(cap in 1usize..8, ops in prop::collection::vec(0u8..12, 1..200)) {
        let mut cache = CacheState::new(EndpointId(1), Capacity::Objects(cap), 0.0, 9).unwrap();
        let mut model: VecDeque<String> = VecDeque::new();
        let mut hits = 0;
        for (t, k) in ops.iter().enumerate() {
            let url = format!("/o/{k}");
            let expect_hit = model.contains(&url);
            match cache.lookup(t as f64, &url) {
                Lookup::Hit { size } => {
                    prop_assert!(expect_hit);
                    prop_assert_eq!(size, *k as u64 + 1);
                    hits += 1;
                    model.retain(|u| u != &url);
                    model.push_front(url);
                }
                Lookup::Miss => {
                    prop_assert!(!expect_hit);
                    prop_assert_eq!(cache.complete_miss(t as f64, &url, *k as u64 + 1), ServeOutcome::MissFilled);
                    model.push_front(url);
                    model.truncate(cap);
                }
            }
            prop_assert!(cache.len() <= cap);
            prop_assert_eq!(cache.len(), model.len());
            for u in &model {
                prop_assert!(cache.contains(u));
            }
        }
        let c = cache.counters();
        prop_assert_eq!(c.hits, hits);
        prop_assert_eq!(c.served(), ops.len() as u64);
        prop_assert_eq!(cache.access_log().len(), ops.len());
    }

    #[test]
    fn admission_extremes(urls in prop::collection::vec("[a-z]{1,6}", 1..50), seed in any::<u64>()) {
        let mut always = CacheState::new(EndpointId(1), Capacity::Unbounded, 0.0, seed).unwrap();
        let mut never = CacheState::new(EndpointId(2), Capacity::Unbounded, 1.0, seed).unwrap();
        for u in &urls {
            let a = always.serve(0.0, u, 10, true).unwrap();
            prop_assert!(a == ServeOutcome::Hit || a == ServeOutcome::MissFilled);
            prop_assert_eq!(never.serve(0.0, u, 10, true).unwrap(), ServeOutcome::SwapfailMiss);
        }
        prop_assert!(never.is_empty());
        let distinct: BTreeSet<&String> = urls.iter().collect();
        prop_assert_eq!(always.len(), distinct.len());
    }

    #[test]
    fn admission_is_seeded(seed in any::<u64>()) {
        let run = || {
            let mut c = CacheState::new(EndpointId(1), Capacity::Unbounded, 0.3, seed).unwrap();
            (0..60).map(|i| c.serve(0.0, &format!("/{i}"), 1, true).unwrap()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

// ---------- header rewrites ----------

fn header() -> impl Strategy<Value = Header> {
    (any::<[u8; 6]>(), any::<[u8; 6]>(), any::<u32>(), any::<u32>(), any::<u16>(), any::<u16>()).prop_map(|(a, b, s, d, sp, dp)| Header {
        eth_src: MacAddr(a),
        eth_dst: MacAddr(b),
        ip_src: Ipv4Addr::from(s),
        ip_dst: Ipv4Addr::from(d),
        ip_proto: 6,
        tcp_src: sp,
        tcp_dst: dp,
    })
}

fn set_action() -> impl Strategy<Value = Action> {
    prop_oneof![
        any::<[u8; 6]>().prop_map(|m| Action::SetEthSrc(MacAddr(m))),
        any::<[u8; 6]>().prop_map(|m| Action::SetEthDst(MacAddr(m))),
        any::<u32>().prop_map(|a| Action::SetIpSrc(Ipv4Addr::from(a))),
        any::<u32>().prop_map(|a| Action::SetIpDst(Ipv4Addr::from(a))),
        any::<u16>().prop_map(Action::SetTcpSrc),
        any::<u16>().prop_map(Action::SetTcpDst),
    ]
}

/// Actions writing back the fields of `h` that `actions` changed.
fn restoring(actions: &[Action], h: &Header) -> Vec<Action> {
    actions
        .iter()
        .filter_map(|a| match a {
            Action::SetEthSrc(_) => Some(Action::SetEthSrc(h.eth_src)),
            Action::SetEthDst(_) => Some(Action::SetEthDst(h.eth_dst)),
            Action::SetIpSrc(_) => Some(Action::SetIpSrc(h.ip_src)),
            Action::SetIpDst(_) => Some(Action::SetIpDst(h.ip_dst)),
            Action::SetTcpSrc(_) => Some(Action::SetTcpSrc(h.tcp_src)),
            Action::SetTcpDst(_) => Some(Action::SetTcpDst(h.tcp_dst)),
            Action::Output(_) => None,
        })
        .collect()
}

fn rule(actions: Vec<Action>) -> FlowRule {
    let mut a = actions;
    a.push(Action::Output(1));
    FlowRule::new(Dpid::new("s1"), 1, FlowMatch::default(), a).unwrap()
}

proptest! {
    #[test]
    fn rewrites_are_idempotent_and_invertible(h in header(), sets in prop::collection::vec(set_action(), 0..8)) {
        let r = rule(sets.clone());
        let mut once = h;
        r.rewrite(&mut once);
        let mut twice = once;
        r.rewrite(&mut twice);
        prop_assert_eq!(once, twice);

        let mut back = once;
        rule(restoring(&sets, &h)).rewrite(&mut back);
        prop_assert_eq!(back, h);

        let mut same = h;
        rule(vec![]).rewrite(&mut same);
        prop_assert_eq!(same, h);
        prop_assert_eq!(h.reversed().reversed(), h);
    }

    #[test]
    fn wildcard_matches_everything(h in header(), port in any::<u32>()) {
        prop_assert!(FlowMatch::default().matches(port, &h));
        let exact = FlowMatch {
            in_port: Some(port),
            eth_src: Some(h.eth_src),
            eth_dst: Some(h.eth_dst),
            ip_src: Some(h.ip_src),
            ip_dst: Some(h.ip_dst),
            ip_proto: Some(h.ip_proto),
            tcp_src: Some(h.tcp_src),
            tcp_dst: Some(h.tcp_dst),
        };
        prop_assert!(exact.matches(port, &h));
        prop_assert_eq!(exact.specificity(), 8);
        prop_assert!(!exact.matches(port.wrapping_add(1), &h));
    }
}

