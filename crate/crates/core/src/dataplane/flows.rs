//! Flow tables with header-rewrite actions, packet walks over them, and the
//! two installation shapes the controller uses: client→proxy redirection and
//! proxy→cache steering.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{Ipv4Addr, SocketAddrV4};

use serde::{Deserialize, Serialize};

use super::topology::{Attachment, Direction, Dpid, HostKind, HostSpec, LinkIdx, PortPeer, Topology, TopologyError};
use crate::net::{MacAddr, SessionKey, IPPROTO_TCP};

pub const PRIORITY_SESSION: u16 = 100;
pub const PRIORITY_PROACTIVE: u16 = 50;
pub const PRIORITY_DEFAULT: u16 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Header {
    pub eth_src: MacAddr,
    pub eth_dst: MacAddr,
    pub ip_src: Ipv4Addr,
    pub ip_dst: Ipv4Addr,
    pub ip_proto: u8,
    pub tcp_src: u16,
    pub tcp_dst: u16,
}

impl Header {
    pub fn tcp(src: &Station, dst: &Station) -> Self {
        Header {
            eth_src: src.mac,
            eth_dst: dst.mac,
            ip_src: src.ip,
            ip_dst: dst.ip,
            ip_proto: IPPROTO_TCP,
            tcp_src: src.port,
            tcp_dst: dst.port,
        }
    }

    pub fn src(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.ip_src, self.tcp_src)
    }

    pub fn dst(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.ip_dst, self.tcp_dst)
    }

    /// The header of a reply travelling the opposite way.
    pub fn reversed(&self) -> Self {
        Header {
            eth_src: self.eth_dst,
            eth_dst: self.eth_src,
            ip_src: self.ip_dst,
            ip_dst: self.ip_src,
            ip_proto: self.ip_proto,
            tcp_src: self.tcp_dst,
            tcp_dst: self.tcp_src,
        }
    }
}

/// Wildcard match; `None` fields match anything.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMatch {
    pub in_port: Option<u32>,
    pub eth_src: Option<MacAddr>,
    pub eth_dst: Option<MacAddr>,
    pub ip_src: Option<Ipv4Addr>,
    pub ip_dst: Option<Ipv4Addr>,
    pub ip_proto: Option<u8>,
    pub tcp_src: Option<u16>,
    pub tcp_dst: Option<u16>,
}

impl FlowMatch {
    pub fn matches(&self, in_port: u32, h: &Header) -> bool {
        fn ok<T: PartialEq>(want: &Option<T>, got: &T) -> bool {
            want.as_ref().is_none_or(|w| w == got)
        }
        ok(&self.in_port, &in_port)
            && ok(&self.eth_src, &h.eth_src)
            && ok(&self.eth_dst, &h.eth_dst)
            && ok(&self.ip_src, &h.ip_src)
            && ok(&self.ip_dst, &h.ip_dst)
            && ok(&self.ip_proto, &h.ip_proto)
            && ok(&self.tcp_src, &h.tcp_src)
            && ok(&self.tcp_dst, &h.tcp_dst)
    }

    /// Number of constrained fields.
    pub fn specificity(&self) -> usize {
        [
            self.in_port.is_some(),
            self.eth_src.is_some(),
            self.eth_dst.is_some(),
            self.ip_src.is_some(),
            self.ip_dst.is_some(),
            self.ip_proto.is_some(),
            self.tcp_src.is_some(),
            self.tcp_dst.is_some(),
        ]
        .into_iter()
        .filter(|b| *b)
        .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    SetEthSrc(MacAddr),
    SetEthDst(MacAddr),
    SetIpSrc(Ipv4Addr),
    SetIpDst(Ipv4Addr),
    SetTcpSrc(u16),
    SetTcpDst(u16),
    Output(u32),
}

impl Action {
    fn apply(&self, h: &mut Header) {
        match *self {
            Action::SetEthSrc(m) => h.eth_src = m,
            Action::SetEthDst(m) => h.eth_dst = m,
            Action::SetIpSrc(ip) => h.ip_src = ip,
            Action::SetIpDst(ip) => h.ip_dst = ip,
            Action::SetTcpSrc(p) => h.tcp_src = p,
            Action::SetTcpDst(p) => h.tcp_dst = p,
            Action::Output(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlowError {
    #[error("flow rule must end with exactly one Output action")]
    BadActionList,
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("session {0} already has an active installation")]
    DuplicateSession(SessionKey),
    #[error("redirect for {0} already installed toward a different proxy")]
    RedirectConflict(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRule {
    pub dpid: Dpid,
    pub priority: u16,
    pub matcher: FlowMatch,
    pub actions: Vec<Action>,
    /// Assigned on insertion; also the final tie-break between rules.
    pub cookie: u64,
    /// Simulation time from which the switch applies this rule.
    pub active_from_ms: f64,
}

impl FlowRule {
    pub fn new(dpid: Dpid, priority: u16, matcher: FlowMatch, actions: Vec<Action>) -> Result<Self, FlowError> {
        let outputs = actions.iter().filter(|a| matches!(a, Action::Output(_))).count();
        if outputs != 1 || !matches!(actions.last(), Some(Action::Output(_))) {
            return Err(FlowError::BadActionList);
        }
        Ok(FlowRule { dpid, priority, matcher, actions, cookie: 0, active_from_ms: 0.0 })
    }

    pub fn output_port(&self) -> u32 {
        match self.actions.last() {
            Some(Action::Output(p)) => *p,
            _ => unreachable!("validated in FlowRule::new"),
        }
    }

    /// Applies the rewrite actions to `h`.
    pub fn rewrite(&self, h: &mut Header) {
        for a in &self.actions {
            a.apply(h);
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FlowTables {
    tables: BTreeMap<Dpid, Vec<FlowRule>>,
}

impl FlowTables {
    /// Highest priority wins, then the most specific match, then the oldest rule.
    pub fn lookup(&self, dpid: &Dpid, in_port: u32, h: &Header, now_ms: f64) -> Option<&FlowRule> {
        self.tables
            .get(dpid)?
            .iter()
            .filter(|r| r.active_from_ms <= now_ms && r.matcher.matches(in_port, h))
            .max_by(|a, b| {
                a.priority
                    .cmp(&b.priority)
                    .then(a.matcher.specificity().cmp(&b.matcher.specificity()))
                    .then(b.cookie.cmp(&a.cookie))
            })
    }

    fn insert(&mut self, rule: FlowRule) {
        self.tables.entry(rule.dpid.clone()).or_default().push(rule);
    }

    fn remove(&mut self, cookies: &BTreeSet<u64>) {
        for rules in self.tables.values_mut() {
            rules.retain(|r| !cookies.contains(&r.cookie));
        }
    }

    pub fn rule_count(&self) -> usize {
        self.tables.values().map(Vec::len).sum()
    }

    pub fn rules(&self, dpid: &Dpid) -> &[FlowRule] {
        self.tables.get(dpid).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Link, network and transport addressing of an endpoint plus where it sits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Station {
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub port: u16,
    pub attachment: Attachment,
}

impl Station {
    pub fn socket(&self) -> SocketAddrV4 {
        SocketAddrV4::new(self.ip, self.port)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathInstallation {
    pub session_key: SessionKey,
    pub forward_rules: Vec<FlowRule>,
    pub reverse_rules: Vec<FlowRule>,
    /// Where the forward direction ends up after rewriting.
    pub target: Station,
}

impl PathInstallation {
    pub fn dpids(&self) -> Vec<Dpid> {
        self.forward_rules.iter().map(|r| r.dpid.clone()).collect()
    }

    pub fn active_from_ms(&self) -> f64 {
        self.forward_rules
            .iter()
            .chain(&self.reverse_rules)
            .map(|r| r.active_from_ms)
            .fold(0.0, f64::max)
    }

    fn cookies(&self) -> BTreeSet<u64> {
        self.forward_rules.iter().chain(&self.reverse_rules).map(|r| r.cookie).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RedirectScope {
    /// Installed ahead of traffic; matches any client source port.
    Proactive,
    /// Installed on the first SYN; matches only that client port.
    Session(u16),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hop {
    pub dpid: Dpid,
    pub in_port: u32,
    pub out_port: u32,
    pub rule_cookie: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WalkOutcome {
    Delivered { host: String, header: Header },
    Dropped { dpid: Dpid, header: Header },
    Looped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    pub hops: Vec<Hop>,
    pub outcome: WalkOutcome,
    /// Every link traversed, in order, including the sender's access link.
    pub links: Vec<(LinkIdx, Direction)>,
    pub latency_us: u64,
}

impl Walk {
    pub fn delivered_to(&self) -> Option<(&str, &Header)> {
        match &self.outcome {
            WalkOutcome::Delivered { host, header } => Some((host, header)),
            _ => None,
        }
    }

    pub fn latency_ms(&self) -> f64 {
        self.latency_us as f64 / 1000.0
    }
}

type RedirectKey = (Ipv4Addr, SocketAddrV4, Option<u16>);

/// Simulated switch fabric: topology, per-switch flow tables and the set of
/// live installations.
#[derive(Clone, Debug)]
pub struct Dataplane {
    topology: Topology,
    tables: FlowTables,
    sessions: BTreeMap<SessionKey, PathInstallation>,
    redirects: BTreeMap<RedirectKey, PathInstallation>,
    next_cookie: u64,
}

impl Dataplane {
    /// Builds the fabric and installs destination-based default routes for
    /// every known host.
    pub fn new(topology: Topology) -> Self {
        let mut dp = Dataplane {
            topology,
            tables: FlowTables::default(),
            sessions: BTreeMap::new(),
            redirects: BTreeMap::new(),
            next_cookie: 1,
        };
        let hosts: Vec<String> = dp.topology.hosts().map(|h| h.id.clone()).collect();
        for h in hosts {
            dp.install_default_routes(&h);
        }
        dp
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn tables(&self) -> &FlowTables {
        &self.tables
    }

    /// Ensures a registered ICN element is reachable as a host. A host with
    /// the same address at the same attachment is accepted as-is.
    pub fn attach_station(&mut self, id: &str, station: &Station) -> Result<(), TopologyError> {
        if let Some(existing) = self.topology.host_by_ip(station.ip) {
            if existing.attachment == station.attachment {
                return Ok(());
            }
            return Err(TopologyError::DuplicateHostAddress(station.ip));
        }
        if !self.topology.has_switch(&station.attachment.dpid) {
            return Err(TopologyError::UnknownSwitch(station.attachment.dpid.clone()));
        }
        if let Some(PortPeer::Host { host, .. }) = self.topology.port_peer(&station.attachment.dpid, station.attachment.port) {
            log::warn!("attachment {} already used by host {host}", station.attachment);
            return Err(TopologyError::PortInUse { dpid: station.attachment.dpid.clone(), port: station.attachment.port });
        }
        self.topology.add_host(&HostSpec {
            id: id.to_string(),
            mac: Some(station.mac),
            ip: station.ip,
            attachment: station.attachment.clone(),
            kind: HostKind::Infrastructure,
            latency_ms: 0.5,
            bandwidth_mbps: 1000.0,
        })?;
        self.install_default_routes(id);
        Ok(())
    }

    fn alloc_cookie(&mut self) -> u64 {
        let c = self.next_cookie;
        self.next_cookie += 1;
        c
    }

    fn push_rule(&mut self, mut rule: FlowRule, active_from_ms: f64) -> FlowRule {
        rule.cookie = self.alloc_cookie();
        rule.active_from_ms = active_from_ms;
        self.tables.insert(rule.clone());
        rule
    }

    fn install_default_routes(&mut self, host_id: &str) {
        let Some(host) = self.topology.host(host_id).cloned() else { return };
        let switches: Vec<Dpid> = self.topology.switches().cloned().collect();
        for s in switches {
            let port = if s == host.attachment.dpid {
                Some(host.attachment.port)
            } else {
                self.topology
                    .shortest_switch_path(&s, &host.attachment.dpid)
                    .ok()
                    .and_then(|(p, _)| self.topology.port_towards(&p[0], &p[1]))
            };
            if let Some(port) = port {
                let m = FlowMatch { ip_dst: Some(host.ip), ..FlowMatch::default() };
                let rule = FlowRule::new(s, PRIORITY_DEFAULT, m, vec![Action::Output(port)]).expect("valid");
                self.push_rule(rule, 0.0);
            }
        }
    }

    /// Output ports along `path` so that traffic ends at `last_port` on the
    /// final switch.
    fn egress_ports(&self, path: &[Dpid], last_port: u32) -> Vec<u32> {
        let mut out: Vec<u32> = path
            .windows(2)
            .map(|w| self.topology.port_towards(&w[0], &w[1]).expect("adjacent on computed path"))
            .collect();
        out.push(last_port);
        out
    }

    /// Rules along `path`: the first switch matches `first` and applies
    /// `first_rewrites`; later switches match `rest`.
    fn path_rules(
        &self,
        path: &[Dpid],
        last_port: u32,
        first: FlowMatch,
        first_rewrites: &[Action],
        rest: FlowMatch,
        priority: u16,
    ) -> Vec<FlowRule> {
        let ports = self.egress_ports(path, last_port);
        path.iter()
            .zip(ports)
            .enumerate()
            .map(|(i, (dpid, port))| {
                let (m, mut actions) = if i == 0 { (first.clone(), first_rewrites.to_vec()) } else { (rest.clone(), vec![]) };
                actions.push(Action::Output(port));
                FlowRule::new(dpid.clone(), priority, m, actions).expect("output last")
            })
            .collect()
    }

    /// Like [`path_rules`](Self::path_rules) but the rewrite happens at the
    /// final switch, just before delivery.
    fn path_rules_rewrite_last(&self, path: &[Dpid], last_port: u32, m: FlowMatch, last_rewrites: &[Action], priority: u16) -> Vec<FlowRule> {
        let ports = self.egress_ports(path, last_port);
        let n = path.len();
        path.iter()
            .zip(ports)
            .enumerate()
            .map(|(i, (dpid, port))| {
                let mut actions = if i + 1 == n { last_rewrites.to_vec() } else { vec![] };
                actions.push(Action::Output(port));
                FlowRule::new(dpid.clone(), priority, m.clone(), actions).expect("output last")
            })
            .collect()
    }

    /// Redirects the client's TCP traffic for `original_dst` to `proxy`,
    /// rewriting destination fields at the client's first hop and restoring
    /// the source fields on the way back so the client keeps seeing the
    /// original peer.
    pub fn install_redirect_to_proxy(
        &mut self,
        client_host: &str,
        original_dst: &Station,
        proxy: &Station,
        scope: RedirectScope,
        active_from_ms: f64,
    ) -> Result<PathInstallation, FlowError> {
        let client = self
            .topology
            .host(client_host)
            .cloned()
            .ok_or_else(|| TopologyError::UnknownHost(client_host.to_string()))?;
        let client_port = match scope {
            RedirectScope::Proactive => None,
            RedirectScope::Session(p) => Some(p),
        };
        let key: RedirectKey = (client.ip, original_dst.socket(), client_port);
        if let Some(existing) = self.redirects.get(&key) {
            if existing.target == *proxy {
                return Ok(existing.clone());
            }
            return Err(FlowError::RedirectConflict(client_host.to_string()));
        }
        let priority = match scope {
            RedirectScope::Proactive => PRIORITY_PROACTIVE,
            RedirectScope::Session(_) => PRIORITY_SESSION,
        };
        let path = self.topology.shortest_path(&client.attachment, &proxy.attachment)?;
        let first = FlowMatch {
            in_port: Some(client.attachment.port),
            ip_proto: Some(IPPROTO_TCP),
            ip_src: Some(client.ip),
            tcp_src: client_port,
            ip_dst: Some(original_dst.ip),
            tcp_dst: Some(original_dst.port),
            ..FlowMatch::default()
        };
        let rest = FlowMatch {
            ip_proto: Some(IPPROTO_TCP),
            ip_src: Some(client.ip),
            tcp_src: client_port,
            ip_dst: Some(proxy.ip),
            tcp_dst: Some(proxy.port),
            ..FlowMatch::default()
        };
        let rewrites = [Action::SetEthDst(proxy.mac), Action::SetIpDst(proxy.ip), Action::SetTcpDst(proxy.port)];
        let forward = self.path_rules(&path, proxy.attachment.port, first, &rewrites, rest, priority);

        let back: Vec<Dpid> = path.iter().rev().cloned().collect();
        let reply = FlowMatch {
            ip_proto: Some(IPPROTO_TCP),
            ip_src: Some(proxy.ip),
            tcp_src: Some(proxy.port),
            ip_dst: Some(client.ip),
            tcp_dst: client_port,
            ..FlowMatch::default()
        };
        let restore = [
            Action::SetEthSrc(original_dst.mac),
            Action::SetIpSrc(original_dst.ip),
            Action::SetTcpSrc(original_dst.port),
        ];
        let reverse = self.path_rules_rewrite_last(&back, client.attachment.port, reply, &restore, priority);

        let inst = self.commit(
            SessionKey::new(SocketAddrV4::new(client.ip, client_port.unwrap_or(0)), original_dst.socket()),
            forward,
            reverse,
            proxy.clone(),
            active_from_ms,
        );
        self.redirects.insert(key, inst.clone());
        Ok(inst)
    }

    /// Steers the proxy's upstream connection `session` (proxy → original
    /// destination) to `cache`. Re-installing an identical steering is a no-op.
    pub fn install_proxy_to_cache(
        &mut self,
        session: SessionKey,
        proxy: &Station,
        cache: &Station,
        active_from_ms: f64,
    ) -> Result<PathInstallation, FlowError> {
        if let Some(existing) = self.sessions.get(&session) {
            if existing.target == *cache {
                return Ok(existing.clone());
            }
            return Err(FlowError::DuplicateSession(session));
        }
        let path = self.topology.shortest_path(&proxy.attachment, &cache.attachment)?;
        let first = FlowMatch {
            in_port: Some(proxy.attachment.port),
            ip_proto: Some(IPPROTO_TCP),
            ip_src: Some(session.src_ip),
            tcp_src: Some(session.src_port),
            ip_dst: Some(session.dst_ip),
            tcp_dst: Some(session.dst_port),
            ..FlowMatch::default()
        };
        let rest = FlowMatch {
            ip_proto: Some(IPPROTO_TCP),
            ip_src: Some(session.src_ip),
            tcp_src: Some(session.src_port),
            ip_dst: Some(cache.ip),
            tcp_dst: Some(cache.port),
            ..FlowMatch::default()
        };
        let rewrites = [Action::SetEthDst(cache.mac), Action::SetIpDst(cache.ip), Action::SetTcpDst(cache.port)];
        let forward = self.path_rules(&path, cache.attachment.port, first, &rewrites, rest, PRIORITY_SESSION);

        let back: Vec<Dpid> = path.iter().rev().cloned().collect();
        let reply = FlowMatch {
            ip_proto: Some(IPPROTO_TCP),
            ip_src: Some(cache.ip),
            tcp_src: Some(cache.port),
            ip_dst: Some(session.src_ip),
            tcp_dst: Some(session.src_port),
            ..FlowMatch::default()
        };
        let dst_mac = self
            .topology
            .host_by_ip(session.dst_ip)
            .map(|h| h.mac)
            .unwrap_or_else(|| MacAddr::from_ipv4(session.dst_ip));
        let restore = [Action::SetEthSrc(dst_mac), Action::SetIpSrc(session.dst_ip), Action::SetTcpSrc(session.dst_port)];
        let reverse = self.path_rules_rewrite_last(&back, proxy.attachment.port, reply, &restore, PRIORITY_SESSION);

        let inst = self.commit(session, forward, reverse, cache.clone(), active_from_ms);
        self.sessions.insert(session, inst.clone());
        Ok(inst)
    }

    fn commit(
        &mut self,
        session_key: SessionKey,
        forward: Vec<FlowRule>,
        reverse: Vec<FlowRule>,
        target: Station,
        active_from_ms: f64,
    ) -> PathInstallation {
        let forward_rules = forward.into_iter().map(|r| self.push_rule(r, active_from_ms)).collect();
        let reverse_rules = reverse.into_iter().map(|r| self.push_rule(r, active_from_ms)).collect();
        PathInstallation { session_key, forward_rules, reverse_rules, target }
    }

    /// Removes both directions of a proxy→cache installation.
    pub fn teardown_session(&mut self, session: &SessionKey) -> Option<PathInstallation> {
        let inst = self.sessions.remove(session)?;
        self.tables.remove(&inst.cookies());
        Some(inst)
    }

    pub fn session(&self, key: &SessionKey) -> Option<&PathInstallation> {
        self.sessions.get(key)
    }

    pub fn active_sessions(&self) -> usize {
        self.sessions.len()
    }

    /// Follows `header` from `sender` through the flow tables as they stand
    /// at `now_ms`.
    pub fn packet_walk(&self, sender: &str, header: Header, now_ms: f64) -> Result<Walk, TopologyError> {
        let host = self.topology.host(sender).ok_or_else(|| TopologyError::UnknownHost(sender.to_string()))?;
        let mut links = vec![(host.link, Direction::Reverse)];
        let mut latency_us = self.topology.link(host.link).latency_us;
        let mut at = host.attachment.clone();
        let mut h = header;
        let mut hops = Vec::new();
        let limit = self.topology.switches().count() + 1;
        loop {
            if hops.len() > limit {
                return Ok(Walk { hops, outcome: WalkOutcome::Looped, links, latency_us });
            }
            let Some(rule) = self.tables.lookup(&at.dpid, at.port, &h, now_ms) else {
                return Ok(Walk { hops, outcome: WalkOutcome::Dropped { dpid: at.dpid, header: h }, links, latency_us });
            };
            rule.rewrite(&mut h);
            let out = rule.output_port();
            hops.push(Hop { dpid: at.dpid.clone(), in_port: at.port, out_port: out, rule_cookie: rule.cookie });
            match self.topology.port_peer(&at.dpid, out) {
                Some(PortPeer::Host { link, host }) => {
                    links.push((*link, Direction::Forward));
                    latency_us += self.topology.link(*link).latency_us;
                    return Ok(Walk {
                        hops,
                        outcome: WalkOutcome::Delivered { host: host.clone(), header: h },
                        links,
                        latency_us,
                    });
                }
                Some(PortPeer::Switch { link, dir, peer, peer_port }) => {
                    links.push((*link, *dir));
                    latency_us += self.topology.link(*link).latency_us;
                    at = Attachment { dpid: peer.clone(), port: *peer_port };
                }
                None => {
                    return Ok(Walk { hops, outcome: WalkOutcome::Dropped { dpid: at.dpid, header: h }, links, latency_us });
                }
            }
        }
    }

    /// Orders candidates by one-way latency from `from`, nearest first, with
    /// the key as tie-break. Unreachable candidates go last.
    pub fn distance_order<K: Ord + Clone>(&self, from: &Attachment, candidates: impl IntoIterator<Item = (K, Attachment)>) -> Vec<K> {
        let mut scored: Vec<(u64, K)> = candidates
            .into_iter()
            .map(|(k, at)| (self.topology.attachment_latency_us(from, &at).unwrap_or(u64::MAX), k))
            .collect();
        scored.sort();
        scored.into_iter().map(|(_, k)| k).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::topology::{LinkSpec, TopologyConfig};

    fn ip(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn host(id: &str, addr: &str, dpid: &str, port: u32, kind: HostKind) -> HostSpec {
        HostSpec {
            id: id.into(),
            mac: None,
            ip: ip(addr),
            attachment: Attachment::new(dpid, port),
            kind,
            latency_ms: 1.0,
            bandwidth_mbps: 100.0,
        }
    }

    fn fabric() -> Dataplane {
        let links = vec![
            LinkSpec { a: Dpid::new("s1"), a_port: 1, b: Dpid::new("s2"), b_port: 1, latency_ms: 2.0, bandwidth_mbps: 100.0 },
            LinkSpec { a: Dpid::new("s2"), a_port: 2, b: Dpid::new("s3"), b_port: 1, latency_ms: 2.0, bandwidth_mbps: 100.0 },
        ];
        let hosts = vec![
            host("client", "10.0.0.5", "s1", 10, HostKind::Client),
            host("proxy", "10.0.0.10", "s1", 11, HostKind::Infrastructure),
            host("c1", "10.0.0.21", "s1", 12, HostKind::Infrastructure),
            host("c2", "10.0.0.22", "s2", 12, HostKind::Infrastructure),
            host("origin", "10.10.0.1", "s3", 10, HostKind::Server),
        ];
        let topo = Topology::from_config(&TopologyConfig {
            switches: ["s1", "s2", "s3"].into_iter().map(Dpid::new).collect(),
            links,
            hosts,
        })
        .unwrap();
        Dataplane::new(topo)
    }

    fn station(dp: &Dataplane, id: &str, port: u16) -> Station {
        let h = dp.topology().host(id).unwrap();
        Station { mac: h.mac, ip: h.ip, port, attachment: h.attachment.clone() }
    }

    #[test]
    fn rule_validation() {
        let d = Dpid::new("s1");
        assert!(FlowRule::new(d.clone(), 1, FlowMatch::default(), vec![]).is_err());
        assert!(FlowRule::new(d.clone(), 1, FlowMatch::default(), vec![Action::Output(1), Action::SetTcpDst(2)]).is_err());
        assert!(FlowRule::new(d.clone(), 1, FlowMatch::default(), vec![Action::Output(1), Action::Output(2)]).is_err());
        assert!(FlowRule::new(d, 1, FlowMatch::default(), vec![Action::SetTcpDst(2), Action::Output(1)]).is_ok());
    }

    #[test]
    fn default_routes_deliver_by_destination() {
        let dp = fabric();
        let h = Header::tcp(&station(&dp, "client", 40000), &station(&dp, "origin", 80));
        let walk = dp.packet_walk("client", h, 0.0).unwrap();
        let (to, hdr) = walk.delivered_to().unwrap();
        assert_eq!(to, "origin");
        assert_eq!(*hdr, h);
        assert_eq!(walk.hops.len(), 3);
        assert_eq!(walk.latency_us, 1000 + 2000 + 2000 + 1000);
    }

    #[test]
    fn redirect_is_transparent_to_client() {
        let mut dp = fabric();
        let origin = station(&dp, "origin", 80);
        let proxy = station(&dp, "proxy", 8080);
        let inst = dp.install_redirect_to_proxy("client", &origin, &proxy, RedirectScope::Proactive, 0.0).unwrap();
        assert_eq!(inst.dpids(), vec![Dpid::new("s1")]);

        let client = station(&dp, "client", 40000);
        let syn = Header::tcp(&client, &origin);
        let walk = dp.packet_walk("client", syn, 0.0).unwrap();
        let (to, at_proxy) = walk.delivered_to().unwrap();
        assert_eq!(to, "proxy");
        assert_eq!(at_proxy.dst(), proxy.socket());
        assert_eq!(at_proxy.eth_dst, proxy.mac);

        let back = dp.packet_walk("proxy", at_proxy.reversed(), 0.0).unwrap();
        let (to, at_client) = back.delivered_to().unwrap();
        assert_eq!(to, "client");
        assert_eq!(at_client.src(), "10.10.0.1:80".parse().unwrap());
        assert_eq!(*at_client, syn.reversed());
    }

    #[test]
    fn proxy_to_cache_steering_and_teardown() {
        let mut dp = fabric();
        let origin = station(&dp, "origin", 80);
        let proxy = station(&dp, "proxy", 40001);
        let cache = station(&dp, "c2", 3128);
        let key = SessionKey::new(proxy.socket(), origin.socket());
        let inst = dp.install_proxy_to_cache(key, &proxy, &cache, 5.0).unwrap();
        assert_eq!(inst.dpids(), vec![Dpid::new("s1"), Dpid::new("s2")]);

        let h = Header::tcp(&proxy, &origin);
        // not yet active: default route still reaches the origin
        let early = dp.packet_walk("proxy", h, 4.0).unwrap();
        assert_eq!(early.delivered_to().unwrap().0, "origin");

        let walk = dp.packet_walk("proxy", h, 5.0).unwrap();
        let (to, at_cache) = walk.delivered_to().unwrap();
        assert_eq!(to, "c2");
        assert_eq!(at_cache.dst(), cache.socket());
        let back = dp.packet_walk("c2", at_cache.reversed(), 5.0).unwrap();
        let (to, at_proxy) = back.delivered_to().unwrap();
        assert_eq!(to, "proxy");
        assert_eq!(*at_proxy, h.reversed());

        // same steering twice is idempotent, a different cache is not
        assert!(dp.install_proxy_to_cache(key, &proxy, &cache, 5.0).is_ok());
        let c1 = station(&dp, "c1", 3128);
        assert!(matches!(dp.install_proxy_to_cache(key, &proxy, &c1, 5.0), Err(FlowError::DuplicateSession(_))));

        let before = dp.tables().rule_count();
        dp.teardown_session(&key).unwrap();
        assert_eq!(dp.tables().rule_count(), before - inst.forward_rules.len() - inst.reverse_rules.len());
        let after = dp.packet_walk("proxy", h, 10.0).unwrap();
        assert_eq!(after.delivered_to().unwrap().0, "origin");
    }

    #[test]
    fn sessions_with_different_ports_are_disjoint() {
        let mut dp = fabric();
        let origin = station(&dp, "origin", 80);
        let cache = station(&dp, "c1", 3128);
        let a = station(&dp, "proxy", 40001);
        let b = station(&dp, "proxy", 40002);
        let ia = dp.install_proxy_to_cache(SessionKey::new(a.socket(), origin.socket()), &a, &cache, 0.0).unwrap();
        let ib = dp.install_proxy_to_cache(SessionKey::new(b.socket(), origin.socket()), &b, &cache, 0.0).unwrap();
        assert!(ia.cookies().is_disjoint(&ib.cookies()));
        dp.teardown_session(&ia.session_key);
        let walk = dp.packet_walk("proxy", Header::tcp(&b, &origin), 0.0).unwrap();
        assert_eq!(walk.delivered_to().unwrap().0, "c1");
    }

    #[test]
    fn distance_order_nearest_first() {
        let dp = fabric();
        let from = Attachment::new("s1", 10);
        let order = dp.distance_order(&from, [(2u32, Attachment::new("s2", 12)), (1u32, Attachment::new("s1", 12))]);
        assert_eq!(order, vec![1, 2]);
        let tie = dp.distance_order(&from, [(7u32, Attachment::new("s2", 12)), (3u32, Attachment::new("s2", 12))]);
        assert_eq!(tie, vec![3, 7]);
    }
}
