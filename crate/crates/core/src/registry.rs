//! ICN instances, their proxies/caches/prefetchers, and the provider filters
//! that decide which instance a request belongs to.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use ipnet::Ipv4Net;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataplane::{Attachment, Station, Topology};
use crate::net::MacAddr;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = std::num::ParseIntError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                s.strip_prefix($prefix).unwrap_or(s).parse().map($name)
            }
        }
    };
}

id_type!(InstanceId, "icn-");
id_type!(EndpointId, "ep-");
id_type!(ProviderId, "prov-");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IcnType {
    Plain,
    SvcPrefetch,
    DistributedSvcPrefetch,
}

impl IcnType {
    pub const ALL: [IcnType; 3] = [IcnType::Plain, IcnType::SvcPrefetch, IcnType::DistributedSvcPrefetch];

    pub fn as_str(self) -> &'static str {
        match self {
            IcnType::Plain => "PLAIN",
            IcnType::SvcPrefetch => "SVC_PREFETCH",
            IcnType::DistributedSvcPrefetch => "DISTRIBUTED_SVC_PREFETCH",
        }
    }

    pub fn prefetches(self) -> bool {
        !matches!(self, IcnType::Plain)
    }
}

impl fmt::Display for IcnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IcnType {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IcnType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| RegistryError::InvalidType {
                given: s.to_string(),
                allowed: IcnType::ALL.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(", "),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Proxy,
    Cache,
    Prefetcher,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Proxy => "PROXY",
            Role::Cache => "CACHE",
            Role::Prefetcher => "PREFETCHER",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("invalid ICN type `{given}`; allowed: {allowed}")]
    InvalidType { given: String, allowed: String },
    #[error("name must not be empty")]
    EmptyName,
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(EndpointId),
    #[error("unknown provider {0}")]
    UnknownProvider(ProviderId),
    #[error("unknown switch `{0}`")]
    UnknownSwitch(String),
    #[error("a {role} at {ip}:{port} is already registered in this instance")]
    DuplicateAddress { role: Role, ip: Ipv4Addr, port: u16 },
    #[error("malformed pattern `{pattern}`: {reason}")]
    MalformedPattern { pattern: String, reason: String },
    #[error("malformed network `{0}`")]
    MalformedCidr(String),
    #[error("request matches providers of several instances: {0:?}")]
    AmbiguousMatch(Vec<InstanceId>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcnInstance {
    pub instance_id: InstanceId,
    pub name: String,
    pub description: String,
    pub icn_type: IcnType,
    pub provider_ids: BTreeSet<ProviderId>,
    pub proxy_ids: BTreeSet<EndpointId>,
    pub cache_ids: BTreeSet<EndpointId>,
    pub prefetcher_ids: BTreeSet<EndpointId>,
}

impl IcnInstance {
    /// At least one proxy and one cache are required before requests are steered.
    pub fn can_serve(&self) -> bool {
        !self.proxy_ids.is_empty() && !self.cache_ids.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEndpoint {
    pub endpoint_id: EndpointId,
    pub instance_id: InstanceId,
    pub role: Role,
    pub name: String,
    pub description: String,
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub port: u16,
    pub location: Attachment,
    #[serde(default)]
    pub is_proactive: bool,
    #[serde(default)]
    pub endpoint_type: String,
}

impl NetworkEndpoint {
    pub fn station(&self) -> Station {
        Station { mac: self.mac, ip: self.ip, port: self.port, attachment: self.location.clone() }
    }

    /// Host identifier used for the element inside the data plane.
    pub fn host_id(&self) -> String {
        format!("{}-{}", self.role.to_string().to_lowercase(), self.endpoint_id.0)
    }
}

/// Everything needed to create an endpoint, as received from a provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointSpec {
    pub role: Role,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub mac: Option<MacAddr>,
    pub ip: Ipv4Addr,
    pub port: u16,
    pub location: Attachment,
    #[serde(default)]
    pub is_proactive: bool,
    #[serde(default)]
    pub endpoint_type: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderRegistration {
    pub provider_id: ProviderId,
    pub instance_id: InstanceId,
    pub name: String,
    pub description: String,
    pub network: Ipv4Net,
    pub uri_pattern: String,
    pub host_pattern: String,
}

#[derive(Clone, Debug)]
struct Provider {
    registration: ProviderRegistration,
    uri: Regex,
    host: Regex,
}

fn anchored(pattern: &str) -> Result<Regex, RegistryError> {
    Regex::new(&format!("^(?:{pattern})$")).map_err(|e| RegistryError::MalformedPattern {
        pattern: pattern.to_string(),
        reason: e.to_string(),
    })
}

impl Provider {
    fn compile(registration: ProviderRegistration) -> Result<Self, RegistryError> {
        let uri = anchored(&registration.uri_pattern)?;
        let host = anchored(&registration.host_pattern)?;
        Ok(Provider { registration, uri, host })
    }

    fn matches(&self, src: Ipv4Addr, host: &str, path: &str) -> bool {
        // Host header may carry a port
        let host = host.rsplit_once(':').filter(|(_, p)| p.bytes().all(|b| b.is_ascii_digit())).map_or(host, |(h, _)| h);
        self.registration.network.contains(&src) && self.host.is_match(host) && self.uri.is_match(path)
    }
}

/// Parses `a.b.c.d/len`; a bare address is taken as `/32`.
pub fn parse_network(s: &str) -> Result<Ipv4Net, RegistryError> {
    let s = s.trim();
    if !s.contains('/') {
        let ip: Ipv4Addr = s.parse().map_err(|_| RegistryError::MalformedCidr(s.to_string()))?;
        return Ok(Ipv4Net::from(ip));
    }
    s.parse::<Ipv4Net>().map_err(|_| RegistryError::MalformedCidr(s.to_string()))
}

/// Serializable image of the registry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    #[serde(default)]
    pub instances: Vec<IcnInstance>,
    #[serde(default)]
    pub endpoints: Vec<NetworkEndpoint>,
    #[serde(default)]
    pub providers: Vec<ProviderRegistration>,
    #[serde(default)]
    pub next_id: u32,
}

#[derive(Clone, Debug, Default)]
pub struct Registry {
    instances: BTreeMap<InstanceId, IcnInstance>,
    endpoints: BTreeMap<EndpointId, NetworkEndpoint>,
    providers: BTreeMap<ProviderId, Provider>,
    next_id: u32,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    fn fresh(&mut self) -> u32 {
        self.next_id += 1;
        self.next_id
    }

    pub fn create_instance(&mut self, name: &str, description: &str, icn_type: &str) -> Result<InstanceId, RegistryError> {
        let icn_type: IcnType = icn_type.parse()?;
        self.create_instance_typed(name, description, icn_type)
    }

    pub fn create_instance_typed(&mut self, name: &str, description: &str, icn_type: IcnType) -> Result<InstanceId, RegistryError> {
        if name.trim().is_empty() {
            return Err(RegistryError::EmptyName);
        }
        let id = InstanceId(self.fresh());
        self.instances.insert(
            id,
            IcnInstance {
                instance_id: id,
                name: name.to_string(),
                description: description.to_string(),
                icn_type,
                provider_ids: BTreeSet::new(),
                proxy_ids: BTreeSet::new(),
                cache_ids: BTreeSet::new(),
                prefetcher_ids: BTreeSet::new(),
            },
        );
        Ok(id)
    }

    pub fn register_endpoint(&mut self, topology: &Topology, instance_id: InstanceId, spec: EndpointSpec) -> Result<EndpointId, RegistryError> {
        let instance = self.instances.get(&instance_id).ok_or(RegistryError::UnknownInstance(instance_id))?;
        if !topology.has_switch(&spec.location.dpid) {
            return Err(RegistryError::UnknownSwitch(spec.location.dpid.0.clone()));
        }
        let dup = self
            .instance_endpoints(instance, spec.role)
            .any(|e| e.ip == spec.ip && e.port == spec.port);
        if dup {
            return Err(RegistryError::DuplicateAddress { role: spec.role, ip: spec.ip, port: spec.port });
        }
        let id = EndpointId(self.fresh());
        let endpoint = NetworkEndpoint {
            endpoint_id: id,
            instance_id,
            role: spec.role,
            name: spec.name,
            description: spec.description,
            mac: spec.mac.unwrap_or_else(|| MacAddr::from_ipv4(spec.ip)),
            ip: spec.ip,
            port: spec.port,
            location: spec.location,
            is_proactive: spec.role == Role::Proxy && spec.is_proactive,
            endpoint_type: spec.endpoint_type,
        };
        let instance = self.instances.get_mut(&instance_id).expect("checked above");
        match endpoint.role {
            Role::Proxy => instance.proxy_ids.insert(id),
            Role::Cache => instance.cache_ids.insert(id),
            Role::Prefetcher => instance.prefetcher_ids.insert(id),
        };
        self.endpoints.insert(id, endpoint);
        Ok(id)
    }

    pub fn register_provider(
        &mut self,
        instance_id: InstanceId,
        name: &str,
        description: &str,
        network: &str,
        uri_pattern: &str,
        host_pattern: &str,
    ) -> Result<ProviderId, RegistryError> {
        if !self.instances.contains_key(&instance_id) {
            return Err(RegistryError::UnknownInstance(instance_id));
        }
        let network = parse_network(network)?;
        let registration = ProviderRegistration {
            provider_id: ProviderId(0),
            instance_id,
            name: name.to_string(),
            description: description.to_string(),
            network,
            uri_pattern: uri_pattern.to_string(),
            host_pattern: host_pattern.to_string(),
        };
        let mut provider = Provider::compile(registration)?;
        let id = ProviderId(self.fresh());
        provider.registration.provider_id = id;
        self.providers.insert(id, provider);
        self.instances.get_mut(&instance_id).expect("checked").provider_ids.insert(id);
        Ok(id)
    }

    /// The unique `(instance, provider)` whose filters accept the request.
    /// Within one instance the longest source prefix wins, then the lowest
    /// provider id; matches spanning instances are reported as ambiguous.
    pub fn match_request(&self, src_ip: Ipv4Addr, host: &str, path: &str) -> Result<Option<(InstanceId, ProviderId)>, RegistryError> {
        let hits: Vec<&ProviderRegistration> = self
            .providers
            .values()
            .filter(|p| p.matches(src_ip, host, path))
            .map(|p| &p.registration)
            .collect();
        let instances: BTreeSet<InstanceId> = hits.iter().map(|p| p.instance_id).collect();
        if instances.len() > 1 {
            return Err(RegistryError::AmbiguousMatch(instances.into_iter().collect()));
        }
        Ok(hits
            .into_iter()
            .min_by_key(|p| (std::cmp::Reverse(p.network.prefix_len()), p.provider_id))
            .map(|p| (p.instance_id, p.provider_id)))
    }

    pub fn delete_instance(&mut self, id: InstanceId) -> Result<IcnInstance, RegistryError> {
        let inst = self.instances.remove(&id).ok_or(RegistryError::UnknownInstance(id))?;
        self.endpoints.retain(|_, e| e.instance_id != id);
        self.providers.retain(|_, p| p.registration.instance_id != id);
        Ok(inst)
    }

    pub fn delete_endpoint(&mut self, id: EndpointId) -> Result<NetworkEndpoint, RegistryError> {
        let ep = self.endpoints.remove(&id).ok_or(RegistryError::UnknownEndpoint(id))?;
        if let Some(inst) = self.instances.get_mut(&ep.instance_id) {
            inst.proxy_ids.remove(&id);
            inst.cache_ids.remove(&id);
            inst.prefetcher_ids.remove(&id);
        }
        Ok(ep)
    }

    pub fn delete_provider(&mut self, id: ProviderId) -> Result<ProviderRegistration, RegistryError> {
        let p = self.providers.remove(&id).ok_or(RegistryError::UnknownProvider(id))?;
        if let Some(inst) = self.instances.get_mut(&p.registration.instance_id) {
            inst.provider_ids.remove(&id);
        }
        Ok(p.registration)
    }

    pub fn instance(&self, id: InstanceId) -> Option<&IcnInstance> {
        self.instances.get(&id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &IcnInstance> {
        self.instances.values()
    }

    pub fn endpoint(&self, id: EndpointId) -> Option<&NetworkEndpoint> {
        self.endpoints.get(&id)
    }

    pub fn endpoints(&self) -> impl Iterator<Item = &NetworkEndpoint> {
        self.endpoints.values()
    }

    pub fn provider(&self, id: ProviderId) -> Option<&ProviderRegistration> {
        self.providers.get(&id).map(|p| &p.registration)
    }

    fn instance_endpoints<'a>(&'a self, instance: &'a IcnInstance, role: Role) -> impl Iterator<Item = &'a NetworkEndpoint> + 'a {
        let ids = match role {
            Role::Proxy => &instance.proxy_ids,
            Role::Cache => &instance.cache_ids,
            Role::Prefetcher => &instance.prefetcher_ids,
        };
        ids.iter().filter_map(|id| self.endpoints.get(id))
    }

    /// Endpoints of one role in an instance, in registration order.
    pub fn endpoints_of(&self, instance_id: InstanceId, role: Role) -> Vec<&NetworkEndpoint> {
        match self.instances.get(&instance_id) {
            Some(inst) => self.instance_endpoints(inst, role).collect(),
            None => vec![],
        }
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot {
            instances: self.instances.values().cloned().collect(),
            endpoints: self.endpoints.values().cloned().collect(),
            providers: self.providers.values().map(|p| p.registration.clone()).collect(),
            next_id: self.next_id,
        }
    }

    pub fn from_snapshot(snapshot: RegistrySnapshot) -> Result<Self, RegistryError> {
        let mut reg = Registry { next_id: snapshot.next_id, ..Registry::default() };
        for inst in snapshot.instances {
            reg.next_id = reg.next_id.max(inst.instance_id.0);
            reg.instances.insert(inst.instance_id, inst);
        }
        for ep in snapshot.endpoints {
            if !reg.instances.contains_key(&ep.instance_id) {
                return Err(RegistryError::UnknownInstance(ep.instance_id));
            }
            reg.next_id = reg.next_id.max(ep.endpoint_id.0);
            reg.endpoints.insert(ep.endpoint_id, ep);
        }
        for p in snapshot.providers {
            if !reg.instances.contains_key(&p.instance_id) {
                return Err(RegistryError::UnknownInstance(p.instance_id));
            }
            reg.next_id = reg.next_id.max(p.provider_id.0);
            reg.providers.insert(p.provider_id, Provider::compile(p)?);
        }
        Ok(reg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.snapshot()).expect("registry snapshot is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self, RegistryLoadError> {
        let snapshot: RegistrySnapshot = toml::from_str(text).map_err(|e| RegistryLoadError::Parse(e.to_string()))?;
        Ok(Registry::from_snapshot(snapshot)?)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryLoadError {
    #[error("cannot parse registry file: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] RegistryError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::{Dpid, LinkSpec, TopologyConfig};

    const MPD_PATH: &str = "/SVCDataset/dataset/mpd-temp/BBB-I-1080p.mpd";

    fn topo() -> Topology {
        Topology::from_config(&TopologyConfig {
            switches: vec![Dpid::new("s1"), Dpid::new("s2")],
            links: vec![LinkSpec { a: Dpid::new("s1"), a_port: 1, b: Dpid::new("s2"), b_port: 1, latency_ms: 1.0, bandwidth_mbps: 100.0 }],
            hosts: vec![],
        })
        .unwrap()
    }

    fn cache_spec(ip: &str) -> EndpointSpec {
        EndpointSpec {
            role: Role::Cache,
            name: "c".into(),
            description: String::new(),
            mac: Some("00:00:00:00:00:01".parse().unwrap()),
            ip: ip.parse().unwrap(),
            port: 3128,
            location: Attachment::new("s2", 3),
            is_proactive: false,
            endpoint_type: "squid".into(),
        }
    }

    #[test]
    fn create_instance_cases() {
        let mut r = Registry::new();
        let i = r.create_instance("bbb-svc", "...", "SVC_PREFETCH").unwrap();
        let inst = r.instance(i).unwrap();
        assert_eq!(inst.icn_type, IcnType::SvcPrefetch);
        assert!(inst.proxy_ids.is_empty() && inst.cache_ids.is_empty() && inst.prefetcher_ids.is_empty());

        let a = r.create_instance("x", "", "PLAIN").unwrap();
        let b = r.create_instance("x", "", "PLAIN").unwrap();
        assert_ne!(a, b);

        match r.create_instance("y", "", "BOGUS") {
            Err(RegistryError::InvalidType { allowed, .. }) => {
                assert!(allowed.contains("PLAIN") && allowed.contains("DISTRIBUTED_SVC_PREFETCH"))
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(r.create_instance(" ", "", "PLAIN"), Err(RegistryError::EmptyName));
    }

    #[test]
    fn register_endpoint_cases() {
        let t = topo();
        let mut r = Registry::new();
        let i = r.create_instance("i", "", "PLAIN").unwrap();
        let c = r.register_endpoint(&t, i, cache_spec("10.0.0.21")).unwrap();
        assert_eq!(r.instance(i).unwrap().cache_ids.len(), 1);
        assert_eq!(r.endpoint(c).unwrap().role, Role::Cache);
        assert!(matches!(r.register_endpoint(&t, i, cache_spec("10.0.0.21")), Err(RegistryError::DuplicateAddress { .. })));

        let mut bad = cache_spec("10.0.0.22");
        bad.location = Attachment::new("s9", 1);
        assert!(matches!(r.register_endpoint(&t, i, bad), Err(RegistryError::UnknownSwitch(_))));
        assert!(matches!(r.register_endpoint(&t, InstanceId(99), cache_spec("10.0.0.23")), Err(RegistryError::UnknownInstance(_))));

        let mut proxy = cache_spec("10.0.0.10");
        proxy.role = Role::Proxy;
        proxy.is_proactive = true;
        let p = r.register_endpoint(&t, i, proxy).unwrap();
        assert!(r.endpoint(p).unwrap().is_proactive);
        assert!(r.instance(i).unwrap().can_serve());
    }

    #[test]
    fn register_provider_cases() {
        let mut r = Registry::new();
        let i = r.create_instance("i", "", "PLAIN").unwrap();
        r.register_provider(i, "bbb", "", "10.0.0.0/24", "/SVCDataset/.*", "concert\\.itec\\..*").unwrap();
        assert!(matches!(
            r.register_provider(i, "bad", "", "10.0.0.0/33", ".*", ".*"),
            Err(RegistryError::MalformedCidr(_))
        ));
        assert!(matches!(
            r.register_provider(i, "bad", "", "10.0.0.0/24", "([", ".*"),
            Err(RegistryError::MalformedPattern { .. })
        ));
        assert!(matches!(
            r.register_provider(InstanceId(77), "bad", "", "10.0.0.0/24", ".*", ".*"),
            Err(RegistryError::UnknownInstance(_))
        ));
    }

    #[test]
    fn match_request_cases() {
        let mut r = Registry::new();
        let i = r.create_instance("i", "", "PLAIN").unwrap();
        let p = r.register_provider(i, "bbb", "", "10.0.0.0/24", "/SVCDataset/.*", "concert\\.itec\\..*").unwrap();
        let src: Ipv4Addr = "10.0.0.5".parse().unwrap();
        assert_eq!(r.match_request(src, "concert.itec.aau.at", MPD_PATH).unwrap(), Some((i, p)));
        assert_eq!(r.match_request(src, "concert.itec.aau.at:80", MPD_PATH).unwrap(), Some((i, p)));
        assert_eq!(r.match_request("192.168.1.1".parse().unwrap(), "concert.itec.aau.at", MPD_PATH).unwrap(), None);
        // patterns are anchored
        assert_eq!(r.match_request(src, "xconcert.itec.aau.at", MPD_PATH).unwrap(), None);
        assert_eq!(r.match_request(src, "concert.itec.aau.at", "/other/SVCDataset/a").unwrap(), None);
    }

    #[test]
    fn longest_prefix_wins_in_either_registration_order() {
        for wide_first in [true, false] {
            let mut r = Registry::new();
            let i = r.create_instance("i", "", "PLAIN").unwrap();
            let mut reg = |net: &str| r.register_provider(i, net, "", net, ".*", ".*").unwrap();
            let (wide, narrow) = if wide_first {
                let w = reg("10.0.0.0/24");
                (w, reg("10.0.0.5/32"))
            } else {
                let n = reg("10.0.0.5/32");
                (reg("10.0.0.0/24"), n)
            };
            let got = r.match_request("10.0.0.5".parse().unwrap(), "h", "/").unwrap();
            assert_eq!(got, Some((i, narrow)));
            let other = r.match_request("10.0.0.6".parse().unwrap(), "h", "/").unwrap();
            assert_eq!(other, Some((i, wide)));
        }
    }

    #[test]
    fn cross_instance_overlap_is_ambiguous() {
        let mut r = Registry::new();
        let a = r.create_instance("a", "", "PLAIN").unwrap();
        let b = r.create_instance("b", "", "PLAIN").unwrap();
        r.register_provider(a, "", "", "10.0.0.0/8", ".*", ".*").unwrap();
        r.register_provider(b, "", "", "10.0.0.0/24", ".*", ".*").unwrap();
        assert_eq!(
            r.match_request("10.0.0.1".parse().unwrap(), "h", "/"),
            Err(RegistryError::AmbiguousMatch(vec![a, b]))
        );
    }

    #[test]
    fn delete_instance_leaves_nothing_behind() {
        let t = topo();
        let mut r = Registry::new();
        let i = r.create_instance("i", "", "PLAIN").unwrap();
        let c = r.register_endpoint(&t, i, cache_spec("10.0.0.21")).unwrap();
        r.register_provider(i, "", "", "10.0.0.0/24", ".*", ".*").unwrap();
        r.delete_instance(i).unwrap();
        assert!(r.endpoint(c).is_none());
        assert_eq!(r.match_request("10.0.0.1".parse().unwrap(), "h", "/").unwrap(), None);
        assert!(matches!(r.delete_instance(i), Err(RegistryError::UnknownInstance(_))));
    }

    #[test]
    fn toml_round_trip() {
        let t = topo();
        let mut r = Registry::new();
        let i = r.create_instance("i", "d", "DISTRIBUTED_SVC_PREFETCH").unwrap();
        r.register_endpoint(&t, i, cache_spec("10.0.0.21")).unwrap();
        r.register_provider(i, "bbb", "", "10.0.0.0/24", "/SVCDataset/.*", "concert\\.itec\\..*").unwrap();
        let text = r.to_toml();
        let back = Registry::from_toml(&text).unwrap();
        assert_eq!(back.snapshot(), r.snapshot());
        let src: Ipv4Addr = "10.0.0.9".parse().unwrap();
        assert_eq!(back.match_request(src, "concert.itec.aau.at", MPD_PATH).unwrap(), r.match_request(src, "concert.itec.aau.at", MPD_PATH).unwrap());
    }
}
