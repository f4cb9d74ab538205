//! Switch graph with host attachments.
//!
//! Latencies are kept as integer microseconds internally so that path
//! comparisons are exact and tie-breaks are reproducible.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::net::MacAddr;

/// OpenFlow datapath identifier.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dpid(pub String);

impl Dpid {
    pub fn new(s: impl Into<String>) -> Self {
        Dpid(s.into())
    }
}

impl fmt::Display for Dpid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `(dpid, port)`: where a host or endpoint plugs into the data plane.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Attachment {
    pub dpid: Dpid,
    pub port: u32,
}

impl Attachment {
    pub fn new(dpid: impl Into<String>, port: u32) -> Self {
        Attachment { dpid: Dpid::new(dpid), port }
    }
}

impl fmt::Display for Attachment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.dpid, self.port)
    }
}

impl std::str::FromStr for Attachment {
    type Err = TopologyError;

    /// Parses the `dpid/port` form used by the management API.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (dpid, port) = trimmed
            .rsplit_once(['/', ','])
            .ok_or_else(|| TopologyError::MalformedAttachment(s.to_string()))?;
        let port = port
            .trim()
            .parse()
            .map_err(|_| TopologyError::MalformedAttachment(s.to_string()))?;
        let dpid = dpid.trim();
        if dpid.is_empty() {
            return Err(TopologyError::MalformedAttachment(s.to_string()));
        }
        Ok(Attachment::new(dpid, port))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("unknown switch `{0}`")]
    UnknownSwitch(Dpid),
    #[error("duplicate switch `{0}`")]
    DuplicateSwitch(Dpid),
    #[error("port {port} on switch `{dpid}` is already in use")]
    PortInUse { dpid: Dpid, port: u32 },
    #[error("link {0} must have positive latency and bandwidth")]
    InvalidLink(usize),
    #[error("duplicate host `{0}`")]
    DuplicateHost(String),
    #[error("address {0} is assigned to more than one host")]
    DuplicateHostAddress(Ipv4Addr),
    #[error("unknown host `{0}`")]
    UnknownHost(String),
    #[error("no path from {from} to {to}")]
    Unreachable { from: Dpid, to: Dpid },
    #[error("malformed attachment `{0}`, expected dpid/port")]
    MalformedAttachment(String),
    #[error("host `{0}` is not connected to the rest of the topology")]
    Disconnected(String),
}

fn default_access_latency() -> f64 {
    0.5
}

fn default_access_bandwidth() -> f64 {
    1000.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: Dpid,
    pub a_port: u32,
    pub b: Dpid,
    pub b_port: u32,
    pub latency_ms: f64,
    pub bandwidth_mbps: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HostKind {
    /// Originates HTTP requests; redirected to a proxy when one is registered.
    #[default]
    Client,
    /// Origin server.
    Server,
    /// Proxy, cache or other ICN element.
    Infrastructure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostSpec {
    pub id: String,
    #[serde(default)]
    pub mac: Option<MacAddr>,
    pub ip: Ipv4Addr,
    pub attachment: Attachment,
    #[serde(default)]
    pub kind: HostKind,
    /// One-way latency of the access link in milliseconds.
    #[serde(default = "default_access_latency")]
    pub latency_ms: f64,
    #[serde(default = "default_access_bandwidth")]
    pub bandwidth_mbps: f64,
}

/// Serializable topology description as it appears in scenario files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub switches: Vec<Dpid>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub hosts: Vec<HostSpec>,
}

/// Index into [`Topology::links`]. Host access links share the same space.
pub type LinkIdx = usize;

/// Travel direction over a link: `Forward` is a→b, where `a` is always the
/// switch side for access links.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LinkEnd {
    Switch(Dpid, u32),
    Host(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub a: LinkEnd,
    pub b: LinkEnd,
    pub latency_us: u64,
    pub bandwidth_mbps: f64,
}

impl Link {
    pub fn latency_ms(&self) -> f64 {
        self.latency_us as f64 / 1000.0
    }

    /// Bytes per millisecond.
    pub fn bytes_per_ms(&self) -> f64 {
        self.bandwidth_mbps * 1_000_000.0 / 8.0 / 1000.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Host {
    pub id: String,
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub attachment: Attachment,
    pub kind: HostKind,
    pub link: LinkIdx,
}

/// What sits on the far side of a switch port.
#[derive(Clone, Debug, PartialEq)]
pub enum PortPeer {
    Switch { link: LinkIdx, dir: Direction, peer: Dpid, peer_port: u32 },
    Host { link: LinkIdx, host: String },
}

#[derive(Clone, Debug, Default)]
pub struct Topology {
    switches: BTreeSet<Dpid>,
    links: Vec<Link>,
    ports: BTreeMap<(Dpid, u32), PortPeer>,
    // neighbour -> candidate parallel links (latency_us, local port)
    adjacency: BTreeMap<Dpid, BTreeMap<Dpid, Vec<(u64, u32)>>>,
    hosts: BTreeMap<String, Host>,
    host_by_ip: HashMap<Ipv4Addr, String>,
}

impl Topology {
    pub fn from_config(config: &TopologyConfig) -> Result<Self, TopologyError> {
        let mut topo = Topology::default();
        for dpid in &config.switches {
            if !topo.switches.insert(dpid.clone()) {
                return Err(TopologyError::DuplicateSwitch(dpid.clone()));
            }
            topo.adjacency.entry(dpid.clone()).or_default();
        }
        for (i, spec) in config.links.iter().enumerate() {
            if !(spec.latency_ms > 0.0 && spec.bandwidth_mbps > 0.0) {
                return Err(TopologyError::InvalidLink(i));
            }
            for d in [&spec.a, &spec.b] {
                if !topo.switches.contains(d) {
                    return Err(TopologyError::UnknownSwitch(d.clone()));
                }
            }
            topo.claim_port(&spec.a, spec.a_port)?;
            topo.claim_port(&spec.b, spec.b_port)?;
            let idx = topo.links.len();
            let latency_us = ms_to_us(spec.latency_ms);
            topo.links.push(Link {
                a: LinkEnd::Switch(spec.a.clone(), spec.a_port),
                b: LinkEnd::Switch(spec.b.clone(), spec.b_port),
                latency_us,
                bandwidth_mbps: spec.bandwidth_mbps,
            });
            topo.ports.insert(
                (spec.a.clone(), spec.a_port),
                PortPeer::Switch { link: idx, dir: Direction::Forward, peer: spec.b.clone(), peer_port: spec.b_port },
            );
            topo.ports.insert(
                (spec.b.clone(), spec.b_port),
                PortPeer::Switch { link: idx, dir: Direction::Reverse, peer: spec.a.clone(), peer_port: spec.a_port },
            );
            topo.adjacency
                .entry(spec.a.clone())
                .or_default()
                .entry(spec.b.clone())
                .or_default()
                .push((latency_us, spec.a_port));
            topo.adjacency
                .entry(spec.b.clone())
                .or_default()
                .entry(spec.a.clone())
                .or_default()
                .push((latency_us, spec.b_port));
        }
        for host in &config.hosts {
            topo.add_host(host)?;
        }
        let Some(first) = topo.hosts.values().next().map(|h| h.attachment.dpid.clone()) else {
            return Ok(topo);
        };
        let reachable = topo.reachable_from(&first);
        if let Some(h) = topo.hosts.values().find(|h| !reachable.contains(&h.attachment.dpid)) {
            return Err(TopologyError::Disconnected(h.id.clone()));
        }
        Ok(topo)
    }

    fn claim_port(&self, dpid: &Dpid, port: u32) -> Result<(), TopologyError> {
        if self.ports.contains_key(&(dpid.clone(), port)) {
            return Err(TopologyError::PortInUse { dpid: dpid.clone(), port });
        }
        Ok(())
    }

    /// Adds a host and its access link.
    pub fn add_host(&mut self, spec: &HostSpec) -> Result<(), TopologyError> {
        if self.hosts.contains_key(&spec.id) {
            return Err(TopologyError::DuplicateHost(spec.id.clone()));
        }
        if self.host_by_ip.contains_key(&spec.ip) {
            return Err(TopologyError::DuplicateHostAddress(spec.ip));
        }
        if !self.switches.contains(&spec.attachment.dpid) {
            return Err(TopologyError::UnknownSwitch(spec.attachment.dpid.clone()));
        }
        if !(spec.latency_ms > 0.0 && spec.bandwidth_mbps > 0.0) {
            return Err(TopologyError::InvalidLink(self.links.len()));
        }
        self.claim_port(&spec.attachment.dpid, spec.attachment.port)?;
        let link = self.links.len();
        self.links.push(Link {
            a: LinkEnd::Switch(spec.attachment.dpid.clone(), spec.attachment.port),
            b: LinkEnd::Host(spec.id.clone()),
            latency_us: ms_to_us(spec.latency_ms),
            bandwidth_mbps: spec.bandwidth_mbps,
        });
        self.ports.insert(
            (spec.attachment.dpid.clone(), spec.attachment.port),
            PortPeer::Host { link, host: spec.id.clone() },
        );
        self.host_by_ip.insert(spec.ip, spec.id.clone());
        self.hosts.insert(
            spec.id.clone(),
            Host {
                id: spec.id.clone(),
                mac: spec.mac.unwrap_or_else(|| MacAddr::from_ipv4(spec.ip)),
                ip: spec.ip,
                attachment: spec.attachment.clone(),
                kind: spec.kind,
                link,
            },
        );
        Ok(())
    }

    fn reachable_from(&self, start: &Dpid) -> BTreeSet<Dpid> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start.clone()];
        while let Some(d) = stack.pop() {
            if seen.insert(d.clone()) {
                if let Some(nbrs) = self.adjacency.get(&d) {
                    stack.extend(nbrs.keys().cloned());
                }
            }
        }
        seen
    }

    pub fn has_switch(&self, dpid: &Dpid) -> bool {
        self.switches.contains(dpid)
    }

    pub fn switches(&self) -> impl Iterator<Item = &Dpid> {
        self.switches.iter()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: LinkIdx) -> &Link {
        &self.links[idx]
    }

    pub fn hosts(&self) -> impl Iterator<Item = &Host> {
        self.hosts.values()
    }

    pub fn host(&self, id: &str) -> Option<&Host> {
        self.hosts.get(id)
    }

    pub fn host_by_ip(&self, ip: Ipv4Addr) -> Option<&Host> {
        self.host_by_ip.get(&ip).and_then(|id| self.hosts.get(id))
    }

    pub fn host_at(&self, attachment: &Attachment) -> Option<&Host> {
        match self.ports.get(&(attachment.dpid.clone(), attachment.port)) {
            Some(PortPeer::Host { host, .. }) => self.hosts.get(host),
            _ => None,
        }
    }

    pub fn port_peer(&self, dpid: &Dpid, port: u32) -> Option<&PortPeer> {
        self.ports.get(&(dpid.clone(), port))
    }

    /// Minimal-latency switch path; equal-latency candidates are ordered by
    /// their dpid sequence and the smallest wins.
    pub fn shortest_path(&self, from: &Attachment, to: &Attachment) -> Result<Vec<Dpid>, TopologyError> {
        self.shortest_switch_path(&from.dpid, &to.dpid).map(|(p, _)| p)
    }

    /// Path plus its total inter-switch latency in microseconds.
    pub fn shortest_switch_path(&self, from: &Dpid, to: &Dpid) -> Result<(Vec<Dpid>, u64), TopologyError> {
        for d in [from, to] {
            if !self.switches.contains(d) {
                return Err(TopologyError::UnknownSwitch(d.clone()));
            }
        }
        let mut settled: BTreeSet<Dpid> = BTreeSet::new();
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0u64, vec![from.clone()])));
        while let Some(Reverse((cost, path))) = heap.pop() {
            let node = path.last().expect("non-empty path").clone();
            if !settled.insert(node.clone()) {
                continue;
            }
            if &node == to {
                return Ok((path, cost));
            }
            for (nbr, parallel) in &self.adjacency[&node] {
                if settled.contains(nbr) {
                    continue;
                }
                let hop = parallel.iter().map(|(lat, _)| *lat).min().expect("link list non-empty");
                let mut next = path.clone();
                next.push(nbr.clone());
                heap.push(Reverse((cost + hop, next)));
            }
        }
        Err(TopologyError::Unreachable { from: from.clone(), to: to.clone() })
    }

    /// Local port on `from` used to reach adjacent switch `to`: the
    /// lowest-latency parallel link, then the lowest port.
    pub fn port_towards(&self, from: &Dpid, to: &Dpid) -> Option<u32> {
        self.adjacency
            .get(from)?
            .get(to)?
            .iter()
            .min()
            .map(|(_, port)| *port)
    }

    /// One-way latency between two attachment points in microseconds,
    /// including the access links of any hosts plugged in at either end.
    pub fn attachment_latency_us(&self, from: &Attachment, to: &Attachment) -> Result<u64, TopologyError> {
        let (_, core) = self.shortest_switch_path(&from.dpid, &to.dpid)?;
        let access = |a: &Attachment| self.host_at(a).map(|h| self.links[h.link].latency_us).unwrap_or(0);
        Ok(core + access(from) + access(to))
    }
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(a: &str, ap: u32, b: &str, bp: u32, lat: f64) -> LinkSpec {
        LinkSpec { a: Dpid::new(a), a_port: ap, b: Dpid::new(b), b_port: bp, latency_ms: lat, bandwidth_mbps: 100.0 }
    }

    fn linear() -> Topology {
        Topology::from_config(&TopologyConfig {
            switches: ["s1", "s2", "s3"].into_iter().map(Dpid::new).collect(),
            links: vec![link("s1", 1, "s2", 1, 1.0), link("s2", 2, "s3", 1, 1.0)],
            hosts: vec![],
        })
        .unwrap()
    }

    /// All simple paths, for checking the tie-break against enumeration.
    fn all_simple_paths(t: &Topology, from: &Dpid, to: &Dpid) -> Vec<(u64, Vec<Dpid>)> {
        fn go(t: &Topology, path: &mut Vec<Dpid>, cost: u64, to: &Dpid, out: &mut Vec<(u64, Vec<Dpid>)>) {
            let last = path.last().unwrap().clone();
            if &last == to {
                out.push((cost, path.clone()));
                return;
            }
            for (n, par) in &t.adjacency[&last] {
                if path.contains(n) {
                    continue;
                }
                let w = par.iter().map(|p| p.0).min().unwrap();
                path.push(n.clone());
                go(t, path, cost + w, to, out);
                path.pop();
            }
        }
        let mut out = vec![];
        go(t, &mut vec![from.clone()], 0, to, &mut out);
        out
    }

    #[test]
    fn linear_path() {
        let t = linear();
        let p = t.shortest_path(&Attachment::new("s1", 9), &Attachment::new("s3", 9)).unwrap();
        assert_eq!(p, vec![Dpid::new("s1"), Dpid::new("s2"), Dpid::new("s3")]);
    }

    #[test]
    fn degenerate_path() {
        let t = linear();
        let p = t.shortest_path(&Attachment::new("s1", 9), &Attachment::new("s1", 8)).unwrap();
        assert_eq!(p, vec![Dpid::new("s1")]);
    }

    #[test]
    fn diamond_takes_smaller_branch() {
        let cfg = |order: bool| {
            let mut links = vec![
                link("a", 1, "c", 1, 2.0),
                link("c", 2, "d", 2, 2.0),
                link("a", 2, "b", 1, 2.0),
                link("b", 2, "d", 1, 2.0),
            ];
            if order {
                links.reverse();
            }
            TopologyConfig { switches: ["d", "c", "b", "a"].into_iter().map(Dpid::new).collect(), links, hosts: vec![] }
        };
        for order in [false, true] {
            let t = Topology::from_config(&cfg(order)).unwrap();
            let (a, d) = (Dpid::new("a"), Dpid::new("d"));
            let mut paths = all_simple_paths(&t, &a, &d);
            paths.sort();
            let got = t.shortest_switch_path(&a, &d).unwrap();
            assert_eq!(got.1, paths[0].0);
            assert_eq!(got.0, paths[0].1);
            assert_eq!(got.0, vec![Dpid::new("a"), Dpid::new("b"), Dpid::new("d")]);
        }
    }

    #[test]
    fn unknown_and_unreachable() {
        let t = Topology::from_config(&TopologyConfig {
            switches: vec![Dpid::new("x"), Dpid::new("y")],
            links: vec![],
            hosts: vec![],
        })
        .unwrap();
        assert!(matches!(
            t.shortest_path(&Attachment::new("x", 1), &Attachment::new("y", 1)),
            Err(TopologyError::Unreachable { .. })
        ));
        assert!(matches!(
            t.shortest_path(&Attachment::new("x", 1), &Attachment::new("q", 1)),
            Err(TopologyError::UnknownSwitch(_))
        ));
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = TopologyConfig {
            switches: vec![Dpid::new("s1"), Dpid::new("s2")],
            links: vec![link("s1", 1, "s2", 1, 0.0)],
            hosts: vec![],
        };
        assert_eq!(Topology::from_config(&cfg).unwrap_err(), TopologyError::InvalidLink(0));
        cfg.links = vec![link("s1", 1, "s2", 1, 1.0), link("s1", 1, "s2", 2, 1.0)];
        assert!(matches!(Topology::from_config(&cfg), Err(TopologyError::PortInUse { .. })));
        cfg.links = vec![];
        cfg.hosts = vec![
            HostSpec {
                id: "h1".into(),
                mac: None,
                ip: "10.0.0.1".parse().unwrap(),
                attachment: Attachment::new("s1", 3),
                kind: HostKind::Client,
                latency_ms: 1.0,
                bandwidth_mbps: 10.0,
            },
            HostSpec {
                id: "h2".into(),
                mac: None,
                ip: "10.0.0.2".parse().unwrap(),
                attachment: Attachment::new("s2", 3),
                kind: HostKind::Client,
                latency_ms: 1.0,
                bandwidth_mbps: 10.0,
            },
        ];
        assert!(matches!(Topology::from_config(&cfg), Err(TopologyError::Disconnected(_))));
    }

    #[test]
    fn attachment_parsing() {
        assert_eq!("s2/3".parse::<Attachment>().unwrap(), Attachment::new("s2", 3));
        assert_eq!("(of:0001,7)".parse::<Attachment>().unwrap(), Attachment::new("of:0001", 7));
        assert!("s2".parse::<Attachment>().is_err());
        assert!("s2/x".parse::<Attachment>().is_err());
    }
}
