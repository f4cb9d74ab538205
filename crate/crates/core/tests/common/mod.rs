//! Generators and checks shared by the property tests and the acceptance
//! suite.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::net::{Ipv4Addr, SocketAddrV4};

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use icnaas::dash::parse_mpd;
use icnaas::dataplane::{Attachment, Dataplane, Dpid, Header, HostKind, HostSpec, LinkSpec, RedirectScope, Station, Topology, TopologyConfig};
use icnaas::net::SessionKey;

// ---------- transparency over random fabrics ----------

#[derive(Clone, Debug)]
pub struct Fabric {
    pub switches: usize,
    /// (child, parent) spanning-tree edges plus extra chords, with latency.
    pub edges: Vec<(usize, usize, u32)>,
    /// Switch of client, proxy, cache, origin.
    pub places: [usize; 4],
    pub client_port: u16,
}

pub fn fabric() -> impl Strategy<Value = Fabric> {
    (1usize..=8)
        .prop_flat_map(|n| {
            let parents: Vec<BoxedStrategy<usize>> = (1..n).map(|i| (0..i).boxed()).collect();
            let chords = prop::collection::vec((0..n, 0..n), 0..=n);
            let lat = prop::collection::vec(1u32..20, 2 * n + 1);
            (Just(n), parents, chords, lat, prop::array::uniform4(0..n), 1024u16..65000)
        })
        .prop_map(|(n, parents, chords, lat, places, client_port)| {
            let mut edges: Vec<(usize, usize, u32)> = parents.iter().enumerate().map(|(i, p)| (i + 1, *p, lat[i])).collect();
            let mut seen: BTreeSet<(usize, usize)> = edges.iter().map(|(a, b, _)| (*a.min(b), *a.max(b))).collect();
            for (k, (a, b)) in chords.into_iter().enumerate() {
                if a != b && seen.insert((a.min(b), a.max(b))) {
                    edges.push((a, b, lat[n + k]));
                }
            }
            Fabric { switches: n, edges, places, client_port }
        })
}

const NAMES: [&str; 4] = ["client", "proxy", "cache", "origin"];
const IPS: [[u8; 4]; 4] = [[10, 0, 0, 5], [10, 0, 0, 10], [10, 0, 0, 21], [10, 10, 0, 1]];

pub fn build(f: &Fabric) -> Dataplane {
    let dpid = |i: usize| Dpid::new(format!("s{}", i + 1));
    let mut next_port = vec![1u32; f.switches];
    let mut links = Vec::new();
    for (a, b, lat) in &f.edges {
        let (pa, pb) = (next_port[*a], next_port[*b]);
        next_port[*a] += 1;
        next_port[*b] += 1;
        links.push(LinkSpec { a: dpid(*a), a_port: pa, b: dpid(*b), b_port: pb, latency_ms: *lat as f64, bandwidth_mbps: 100.0 });
    }
    let hosts = (0..4)
        .map(|k| HostSpec {
            id: NAMES[k].into(),
            mac: None,
            ip: Ipv4Addr::from(IPS[k]),
            attachment: Attachment::new(dpid(f.places[k]).0, 100 + k as u32),
            kind: [HostKind::Client, HostKind::Infrastructure, HostKind::Infrastructure, HostKind::Server][k],
            latency_ms: 1.0,
            bandwidth_mbps: 100.0,
        })
        .collect();
    let topo = Topology::from_config(&TopologyConfig { switches: (0..f.switches).map(dpid).collect(), links, hosts }).unwrap();
    Dataplane::new(topo)
}

pub fn station(dp: &Dataplane, id: &str, port: u16) -> Station {
    let h = dp.topology().host(id).unwrap();
    Station { mac: h.mac, ip: h.ip, port, attachment: h.attachment.clone() }
}

/// Steers one client session through the proxy to the cache and checks
/// what every party observes.
pub fn check_transparency(f: &Fabric) -> Result<(), TestCaseError> {
    let mut dp = build(f);
    let client = station(&dp, "client", f.client_port);
    let proxy = station(&dp, "proxy", 8080);
    let cache = station(&dp, "cache", 3128);
    let origin = station(&dp, "origin", 80);

    dp.install_redirect_to_proxy("client", &origin, &proxy, RedirectScope::Session(f.client_port), 0.0).unwrap();
    // client → origin lands on the proxy socket
    let syn = dp.packet_walk("client", Header::tcp(&client, &origin), 0.0).unwrap();
    let (host, at_proxy) = syn.delivered_to().expect("syn delivered");
    prop_assert_eq!(host, "proxy");
    prop_assert_eq!(at_proxy.dst(), proxy.socket());
    prop_assert_eq!(at_proxy.src(), client.socket());
    // the reply looks like it comes from the origin
    let ack = dp.packet_walk("proxy", at_proxy.reversed(), 0.0).unwrap();
    let (host, at_client) = ack.delivered_to().expect("reply delivered");
    prop_assert_eq!(host, "client");
    prop_assert_eq!(at_client.src(), origin.socket());
    prop_assert_eq!(at_client.eth_src, origin.mac);

    let upstream = SessionKey::new(SocketAddrV4::new(proxy.ip, f.client_port), origin.socket());
    dp.install_proxy_to_cache(upstream, &proxy, &cache, 0.0).unwrap();
    let up = Header::tcp(&Station { port: f.client_port, ..proxy.clone() }, &origin);
    let walk = dp.packet_walk("proxy", up, 0.0).unwrap();
    let (host, at_cache) = walk.delivered_to().expect("upstream delivered");
    prop_assert_eq!(host, "cache");
    prop_assert_eq!(at_cache.dst(), cache.socket());
    let back = dp.packet_walk("cache", at_cache.reversed(), 0.0).unwrap();
    let (host, at_proxy) = back.delivered_to().expect("cache reply delivered");
    prop_assert_eq!(host, "proxy");
    prop_assert_eq!(at_proxy.src(), origin.socket());

    // other client ports are not captured
    let other = Header::tcp(&Station { port: f.client_port.wrapping_add(1).max(1), ..client.clone() }, &origin);
    let walk = dp.packet_walk("client", other, 0.0).unwrap();
    prop_assert_eq!(walk.delivered_to().map(|(h, _)| h.to_string()), Some("origin".to_string()));

    // teardown restores plain routing for the upstream
    prop_assert!(dp.teardown_session(&upstream).is_some());
    let walk = dp.packet_walk("proxy", up, 0.0).unwrap();
    prop_assert_eq!(walk.delivered_to().map(|(h, _)| h.to_string()), Some("origin".to_string()));
    Ok(())
}

// ---------- manifest closure ----------

#[derive(Clone, Debug)]
pub struct Dag {
    /// Representation ids in a topological order (dependencies first).
    pub ids: Vec<u32>,
    /// Direct dependencies by position, pointing at earlier positions.
    pub deps: Vec<Vec<usize>>,
    /// Whether each representation lists its own id too.
    pub self_listed: Vec<bool>,
}

pub fn dag() -> impl Strategy<Value = Dag> {
    (1usize..=10)
        .prop_flat_map(|n| {
            let ids = Just((0..40u32).collect::<Vec<_>>()).prop_shuffle().prop_map(move |v| v[..n].to_vec());
            let deps: Vec<BoxedStrategy<Vec<usize>>> =
                (0..n).map(|i| if i == 0 { Just(vec![]).boxed() } else { prop::collection::vec(0..i, 0..=i.min(3)).boxed() }).collect();
            (ids, deps, prop::collection::vec(any::<bool>(), n))
        })
        .prop_map(|(ids, deps, self_listed)| Dag { ids, deps, self_listed })
}

pub fn dag_xml(d: &Dag, extra_edge: Option<(usize, usize)>) -> String {
    let mut out = String::from("<MPD mediaPresentationDuration=\"PT8S\"><Period><AdaptationSet>");
    out.push_str("<SegmentTemplate timescale=\"1\" duration=\"2\" media=\"seg$Number$-L$RepresentationID$.m4s\"/>");
    for (i, id) in d.ids.iter().enumerate() {
        let mut listed: Vec<u32> = d.deps[i].iter().map(|p| d.ids[*p]).collect();
        if let Some((from, to)) = extra_edge {
            if from == i {
                listed.push(d.ids[to]);
            }
        }
        if d.self_listed[i] {
            listed.insert(0, *id);
        }
        let attr = listed.iter().map(u32::to_string).collect::<Vec<_>>().join(" ");
        let _ = write!(out, "<Representation id=\"{id}\" bandwidth=\"1000\" dependencyId=\"{attr}\"/>");
    }
    out.push_str("</AdaptationSet></Period></MPD>");
    out
}

/// Reflexive transitive closure by Floyd-Warshall over positions.
pub fn floyd_warshall(d: &Dag) -> Vec<Vec<bool>> {
    let n = d.ids.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
        for &j in &d.deps[i] {
            row[j] = true;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    reach
}

/// Every chain equals the Floyd-Warshall closure and is closed under its
/// own members.
pub fn check_closure(d: &Dag) -> Result<(), TestCaseError> {
    let m = parse_mpd("/v/a.mpd", dag_xml(d, None).as_bytes()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let reach = floyd_warshall(d);
    for (i, id) in d.ids.iter().enumerate() {
        let want: BTreeSet<u32> = (0..d.ids.len()).filter(|j| reach[i][*j]).map(|j| d.ids[j]).collect();
        let got = m.resolve_chain(*id).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&got, &want);
        for dep in &got {
            let sub = m.resolve_chain(*dep).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(sub.is_subset(&got));
        }
    }
    Ok(())
}
