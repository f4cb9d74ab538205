//! Controller northbound: ICN management messages, the proxy request
//! notification that decides where a URL is served from, and prefetch
//! orders toward prefetchers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dash::{looks_like_mpd, parse_mpd, MpdError, MpdManifest, UrlClass};
use crate::dataplane::{Attachment, Dataplane, FlowError, HostKind, PathInstallation, RedirectScope, Station};
use crate::net::{MacAddr, SessionKey};
use crate::prefetch::{
    allocate_for_manifest, plan_prefetch, AllocationMap, Placement, PlanLedger, PlanRequest, PrefetchCommand, PrefetchError, QueuedFetch, VideoSession,
};
use crate::proxy::StreamDigest;
use crate::registry::{EndpointId, EndpointSpec, IcnType, InstanceId, NetworkEndpoint, ProviderId, Registry, RegistryError, Role};

pub const PATH_ICN: &str = "onos/icn/icn";
pub const PATH_PROXY: &str = "onos/icn/proxy";
pub const PATH_PREFETCH: &str = "onos/icn/prefetch";
pub const PATH_CACHE: &str = "onos/icn/cache";
pub const PATH_PROVIDER: &str = "onos/icn/provider";
pub const PATH_PROXY_REQUEST: &str = "onos/icn/proxyrequest";
/// Served by prefetchers, called by the controller.
pub const PATH_PREFETCHER_ORDER: &str = "prefetch";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyRequestNotification {
    pub uri: String,
    pub hostname: String,
    pub smac: MacAddr,
    pub source_ip: Ipv4Addr,
    pub destination_ip: Ipv4Addr,
    pub protocol: u8,
    pub source_port: u16,
    pub destination_port: u16,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SteeringTarget {
    Cache { endpoint_id: EndpointId, ip: Ipv4Addr, port: u16 },
    DefaultGateway,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteeringResponse {
    /// Opaque token the proxy echoes in its logs.
    pub decision: String,
    /// What the proxy dials: always the client's original destination.
    pub connect_to: SocketAddrV4,
    pub target: SteeringTarget,
    /// Upstream five-tuple the steering flows match, when flows were installed.
    pub session_key: Option<SessionKey>,
}

impl SteeringResponse {
    pub fn cache(&self) -> Option<EndpointId> {
        match self.target {
            SteeringTarget::Cache { endpoint_id, .. } => Some(endpoint_id),
            SteeringTarget::DefaultGateway => None,
        }
    }
}

/// Work the controller hands back to its caller instead of doing inline, so
/// the steering answer is never delayed by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ControlAction {
    FetchMpd { instance_id: InstanceId, mpd_url: String, host: String, origin: SocketAddrV4 },
    SendPrefetch { prefetcher: EndpointId, fetch: QueuedFetch },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyOutcome {
    pub response: SteeringResponse,
    pub actions: Vec<ControlAction>,
    /// Requests coming from a prefetcher are not client demand.
    pub from_prefetcher: bool,
    pub class: UrlClass,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlContext {
    pub now_ms: f64,
    /// When flows installed while handling this request become active.
    pub flow_activation_ms: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControlError {
    #[error("flow installation rejected: {0}")]
    InstallRejected(#[from] FlowError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Manifest(#[from] MpdError),
    #[error(transparent)]
    Prefetch(#[from] PrefetchError),
}

impl ControlError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ControlError::InstallRejected(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
    Delete,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Ok(Method::Get),
            "POST" => Ok(Method::Post),
            "DELETE" => Ok(Method::Delete),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManagementResponse {
    pub status: u16,
    pub body: Value,
}

impl ManagementResponse {
    fn ok(body: Value) -> Self {
        ManagementResponse { status: 200, body }
    }

    fn created(id: impl std::fmt::Display, raw: u32) -> Self {
        ManagementResponse { status: 201, body: json!({ "id": raw, "ref": id.to_string() }) }
    }

    fn error(status: u16, msg: impl std::fmt::Display) -> Self {
        ManagementResponse { status, body: json!({ "error": msg.to_string() }) }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

pub fn status_for(err: &RegistryError) -> u16 {
    match err {
        RegistryError::InvalidType { .. } | RegistryError::EmptyName | RegistryError::MalformedPattern { .. } | RegistryError::MalformedCidr(_) => 400,
        RegistryError::UnknownInstance(_) | RegistryError::UnknownEndpoint(_) | RegistryError::UnknownProvider(_) | RegistryError::UnknownSwitch(_) => 404,
        RegistryError::DuplicateAddress { .. } | RegistryError::AmbiguousMatch(_) => 409,
    }
}

pub type Params = BTreeMap<String, String>;

fn param<'a>(p: &'a Params, names: &[&str]) -> Option<&'a str> {
    names.iter().find_map(|n| p.get(*n)).map(String::as_str)
}

fn required<'a>(p: &'a Params, names: &[&str]) -> Result<&'a str, ManagementResponse> {
    param(p, names).ok_or_else(|| ManagementResponse::error(400, format!("missing parameter `{}`", names[0])))
}

fn parse_param<T: std::str::FromStr>(p: &Params, names: &[&str]) -> Result<T, ManagementResponse> {
    let raw = required(p, names)?;
    raw.trim().parse().map_err(|_| ManagementResponse::error(400, format!("invalid `{}`: {raw}", names[0])))
}

fn parse_bool(v: Option<&str>) -> Result<bool, ManagementResponse> {
    match v.map(|s| s.trim().to_ascii_lowercase()) {
        None => Ok(false),
        Some(s) => match s.as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" | "" => Ok(false),
            _ => Err(ManagementResponse::error(400, format!("invalid isProactive `{s}`"))),
        },
    }
}

/// Prefetch behavior knobs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrefetchPolicy {
    /// Segments planned per trigger; `None` is the rest of the video.
    pub lookahead: Option<u32>,
}

/// The controller application: registry, data plane and prefetch state.
pub struct IcnService {
    registry: Registry,
    dataplane: Dataplane,
    manifests: BTreeMap<String, Arc<MpdManifest>>,
    pending_mpd: BTreeSet<String>,
    /// Layer allocation per video, `None` when the instance does not distribute.
    videos: BTreeMap<VideoSession, Option<AllocationMap>>,
    ledger: PlanLedger,
    prefetch_targets: HashMap<String, EndpointId>,
    policy: PrefetchPolicy,
    notifications: u64,
}

impl IcnService {
    pub fn new(dataplane: Dataplane, policy: PrefetchPolicy) -> Self {
        IcnService {
            registry: Registry::new(),
            dataplane,
            manifests: BTreeMap::new(),
            pending_mpd: BTreeSet::new(),
            videos: BTreeMap::new(),
            ledger: PlanLedger::default(),
            prefetch_targets: HashMap::new(),
            policy,
            notifications: 0,
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn dataplane(&self) -> &Dataplane {
        &self.dataplane
    }

    pub fn manifest(&self, mpd_url: &str) -> Option<&Arc<MpdManifest>> {
        self.manifests.get(mpd_url)
    }

    pub fn notifications(&self) -> u64 {
        self.notifications
    }

    /// Allocation used for a client's video, when the instance distributes layers.
    pub fn allocation(&self, session: &VideoSession) -> Option<&AllocationMap> {
        self.videos.get(session).and_then(Option::as_ref)
    }

    // ---- management (#1-#5) ----

    pub fn handle_management_request(&mut self, method: Method, path: &str, params: &Params) -> ManagementResponse {
        let path = path.trim_matches('/');
        let result = match (method, path) {
            (Method::Post, PATH_ICN) => self.post_instance(params),
            (Method::Post, PATH_PROXY) => self.post_endpoint(Role::Proxy, params),
            (Method::Post, PATH_CACHE) => self.post_endpoint(Role::Cache, params),
            (Method::Post, PATH_PREFETCH) => self.post_endpoint(Role::Prefetcher, params),
            (Method::Post, PATH_PROVIDER) => self.post_provider(params),
            (Method::Get, PATH_ICN) => Ok(self.list(params)),
            (Method::Get, PATH_PROXY | PATH_CACHE | PATH_PREFETCH | PATH_PROVIDER) => Ok(self.list(params)),
            (Method::Delete, PATH_ICN | PATH_PROXY | PATH_CACHE | PATH_PREFETCH | PATH_PROVIDER) => self.delete(path, params),
            _ => Err(ManagementResponse::error(404, format!("no such path `{path}`"))),
        };
        match result {
            Ok(r) => r,
            Err(r) => {
                log::debug!("{method:?} {path} -> {}", r.status);
                r
            }
        }
    }

    fn post_instance(&mut self, p: &Params) -> Result<ManagementResponse, ManagementResponse> {
        let name = required(p, &["name"])?;
        let description = param(p, &["description"]).unwrap_or("");
        let icn_type = required(p, &["type"])?;
        let id = self.registry.create_instance(name, description, icn_type).map_err(reg_err)?;
        Ok(ManagementResponse::created(id, id.0))
    }

    fn post_endpoint(&mut self, role: Role, p: &Params) -> Result<ManagementResponse, ManagementResponse> {
        let instance: InstanceId = parse_param(p, &["instance", "icn"])?;
        let port_names: &[&str] = match role {
            Role::Proxy => &["proxy_port", "port"],
            Role::Cache => &["cache_port", "port"],
            Role::Prefetcher => &["prefetch_port", "prefetcher_port", "port"],
        };
        let mac = match param(p, &["mac"]) {
            Some(m) => Some(m.parse::<MacAddr>().map_err(|e| ManagementResponse::error(400, e))?),
            None => None,
        };
        let spec = EndpointSpec {
            role,
            name: param(p, &["name"]).unwrap_or("").to_string(),
            description: param(p, &["description"]).unwrap_or("").to_string(),
            mac,
            ip: parse_param(p, &["ip"])?,
            port: parse_param(p, port_names)?,
            location: parse_param::<Attachment>(p, &["location"])?,
            is_proactive: parse_bool(param(p, &["isProactive", "is_proactive"]))?,
            endpoint_type: param(p, &["type"]).unwrap_or("").to_string(),
        };
        let id = self.register_endpoint(instance, spec).map_err(|e| match e {
            ControlError::Registry(r) => reg_err(r),
            other => ManagementResponse::error(409, other),
        })?;
        Ok(ManagementResponse::created(id, id.0))
    }

    fn post_provider(&mut self, p: &Params) -> Result<ManagementResponse, ManagementResponse> {
        let instance: InstanceId = parse_param(p, &["instance"])?;
        let id = self
            .register_provider(
                instance,
                param(p, &["name"]).unwrap_or(""),
                param(p, &["description"]).unwrap_or(""),
                required(p, &["network"])?,
                param(p, &["uripattern", "uri_pattern"]).unwrap_or(".*"),
                param(p, &["hostpattern", "host_pattern"]).unwrap_or(".*"),
            )
            .map_err(reg_err)?;
        Ok(ManagementResponse::created(id, id.0))
    }

    fn list(&self, _p: &Params) -> ManagementResponse {
        ManagementResponse::ok(serde_json::to_value(self.registry.snapshot()).expect("snapshot serializes"))
    }

    fn delete(&mut self, path: &str, p: &Params) -> Result<ManagementResponse, ManagementResponse> {
        let id: u32 = parse_param(p, &["id"])?;
        let res = match path {
            PATH_ICN => self.registry.delete_instance(InstanceId(id)).map(|_| ()),
            PATH_PROVIDER => self.registry.delete_provider(ProviderId(id)).map(|_| ()),
            _ => self.registry.delete_endpoint(EndpointId(id)).map(|_| ()),
        };
        res.map_err(reg_err)?;
        Ok(ManagementResponse::ok(json!({ "deleted": id })))
    }

    /// Registers an endpoint and makes it reachable in the data plane. A
    /// proactive proxy gets its redirects installed right away.
    pub fn register_endpoint(&mut self, instance: InstanceId, spec: EndpointSpec) -> Result<EndpointId, ControlError> {
        let id = self.registry.register_endpoint(self.dataplane.topology(), instance, spec)?;
        let ep = self.registry.endpoint(id).expect("just registered").clone();
        if let Err(e) = self.dataplane.attach_station(&ep.host_id(), &ep.station()) {
            self.registry.delete_endpoint(id)?;
            return Err(ControlError::InstallRejected(FlowError::Topology(e)));
        }
        if ep.role == Role::Proxy && ep.is_proactive {
            self.install_proactive_redirects(instance)?;
        }
        if ep.role == Role::Prefetcher {
            self.install_proactive_redirects(instance)?;
        }
        Ok(id)
    }

    pub fn register_provider(
        &mut self,
        instance: InstanceId,
        name: &str,
        description: &str,
        network: &str,
        uri_pattern: &str,
        host_pattern: &str,
    ) -> Result<ProviderId, RegistryError> {
        let id = self.registry.register_provider(instance, name, description, network, uri_pattern, host_pattern)?;
        if let Err(e) = self.install_proactive_redirects(instance) {
            log::warn!("proactive redirects for {instance}: {e}");
        }
        Ok(id)
    }

    /// Endpoint of `role` in `instance` nearest to `at`, ties by id.
    fn nearest(&self, instance: InstanceId, role: Role, at: Option<&Attachment>) -> Option<NetworkEndpoint> {
        let eps = self.registry.endpoints_of(instance, role);
        let at = match at {
            Some(a) => a,
            None => return eps.first().map(|e| (*e).clone()),
        };
        let order = self.dataplane.distance_order(at, eps.iter().map(|e| (e.endpoint_id, e.location.clone())));
        order.first().and_then(|id| self.registry.endpoint(*id)).cloned()
    }

    fn attachment_of(&self, ip: Ipv4Addr) -> Option<Attachment> {
        self.dataplane.topology().host_by_ip(ip).map(|h| h.attachment.clone())
    }

    /// Caches of `instance` ordered nearest-first from `ip`.
    pub fn cache_order(&self, instance: InstanceId, ip: Ipv4Addr) -> Vec<EndpointId> {
        let caches = self.registry.endpoints_of(instance, Role::Cache);
        match self.attachment_of(ip) {
            Some(at) => self.dataplane.distance_order(&at, caches.iter().map(|e| (e.endpoint_id, e.location.clone()))),
            None => caches.iter().map(|e| e.endpoint_id).collect(),
        }
    }

    /// Redirect rules, ahead of traffic, from every client host or prefetcher
    /// inside the instance's provider networks toward every origin server.
    pub fn install_proactive_redirects(&mut self, instance: InstanceId) -> Result<usize, ControlError> {
        let Some(inst) = self.registry.instance(instance) else { return Ok(0) };
        let networks: Vec<_> = inst
            .provider_ids
            .iter()
            .filter_map(|p| self.registry.provider(*p))
            .map(|p| p.network)
            .collect();
        if networks.is_empty() {
            return Ok(0);
        }
        let prefetchers: BTreeSet<Ipv4Addr> = self.registry.endpoints_of(instance, Role::Prefetcher).iter().map(|e| e.ip).collect();
        let topo = self.dataplane.topology();
        let sources: Vec<(String, Attachment, Ipv4Addr)> = topo
            .hosts()
            .filter(|h| h.kind == HostKind::Client || prefetchers.contains(&h.ip))
            .filter(|h| networks.iter().any(|n| n.contains(&h.ip)))
            .map(|h| (h.id.clone(), h.attachment.clone(), h.ip))
            .collect();
        let servers: Vec<Station> = topo
            .hosts()
            .filter(|h| h.kind == HostKind::Server)
            .map(|h| Station { mac: h.mac, ip: h.ip, port: 80, attachment: h.attachment.clone() })
            .collect();
        let mut installed = 0;
        for (host, at, _) in &sources {
            let Some(proxy) = self.nearest(instance, Role::Proxy, Some(at)) else { continue };
            if !proxy.is_proactive {
                continue;
            }
            let proxy_station = proxy.station();
            for server in &servers {
                match self.dataplane.install_redirect_to_proxy(host, server, &proxy_station, RedirectScope::Proactive, 0.0) {
                    Ok(_) => installed += 1,
                    Err(FlowError::RedirectConflict(h)) => log::warn!("redirect conflict for {h}"),
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok(installed)
    }

    /// Reactive redirect on a client's first SYN, for instances whose proxy
    /// is not proactive. Returns `None` when the traffic is not ICN traffic.
    pub fn on_tcp_syn(&mut self, client_ip: Ipv4Addr, client_port: u16, dst: SocketAddrV4, activation_ms: f64) -> Result<Option<PathInstallation>, ControlError> {
        let Some(client) = self.dataplane.topology().host_by_ip(client_ip).cloned() else { return Ok(None) };
        let instance = self
            .registry
            .instances()
            .find(|i| i.provider_ids.iter().filter_map(|p| self.registry.provider(*p)).any(|p| p.network.contains(&client_ip)))
            .map(|i| i.instance_id);
        let Some(instance) = instance else { return Ok(None) };
        let Some(proxy) = self.nearest(instance, Role::Proxy, Some(&client.attachment)) else { return Ok(None) };
        if proxy.is_proactive {
            return Ok(None);
        }
        let Some(server) = self.dataplane.topology().host_by_ip(*dst.ip()).cloned() else { return Ok(None) };
        let original = Station { mac: server.mac, ip: server.ip, port: dst.port(), attachment: server.attachment };
        let inst = self.dataplane.install_redirect_to_proxy(
            &client.id,
            &original,
            &proxy.station(),
            RedirectScope::Session(client_port),
            activation_ms,
        )?;
        Ok(Some(inst))
    }

    // ---- control (#6) ----

    fn decision_token(uri: &str, key: &SessionKey) -> String {
        let mut d = StreamDigest::default();
        d.update(uri.as_bytes());
        d.update(key.to_string().as_bytes());
        format!("{:016x}", d.hash)
    }

    fn default_gateway(n: &ProxyRequestNotification, key: &SessionKey, class: UrlClass) -> ProxyOutcome {
        ProxyOutcome {
            response: SteeringResponse {
                decision: Self::decision_token(&n.uri, key),
                connect_to: SocketAddrV4::new(n.destination_ip, n.destination_port),
                target: SteeringTarget::DefaultGateway,
                session_key: None,
            },
            actions: vec![],
            from_prefetcher: false,
            class,
        }
    }

    fn find_manifest(&self, uri: &str) -> Option<Arc<MpdManifest>> {
        if let Some(m) = self.manifests.get(uri) {
            return Some(m.clone());
        }
        self.manifests.values().find(|m| m.url_index.contains_key(uri)).cloned()
    }

    /// Decides where a proxied request is served from and installs the
    /// proxy→cache flows. Follow-up work comes back as actions.
    pub fn handle_proxy_request(&mut self, n: &ProxyRequestNotification, ctx: &ControlContext) -> Result<ProxyOutcome, ControlError> {
        self.notifications += 1;
        let client_key = SessionKey::new(SocketAddrV4::new(n.source_ip, n.source_port), SocketAddrV4::new(n.destination_ip, n.destination_port));
        let manifest = self.find_manifest(&n.uri);
        let class = match &manifest {
            Some(m) => m.classify_url(&n.uri),
            None if looks_like_mpd(&n.uri) => UrlClass::Mpd,
            None => UrlClass::Unknown,
        };
        let matched = match self.registry.match_request(n.source_ip, &n.hostname, &n.uri) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("{}: {e}; using default gateway", n.uri);
                None
            }
        };
        let Some((instance_id, _provider)) = matched else {
            return Ok(Self::default_gateway(n, &client_key, class));
        };
        let instance = self.registry.instance(instance_id).expect("matched").clone();
        if !instance.can_serve() {
            return Ok(Self::default_gateway(n, &client_key, class));
        }
        let source_at = self.attachment_of(n.source_ip);
        let proxy = self.nearest(instance_id, Role::Proxy, source_at.as_ref()).expect("can_serve implies a proxy");
        let from_prefetcher = self.registry.endpoints_of(instance_id, Role::Prefetcher).iter().any(|p| p.ip == n.source_ip);

        let mut actions = Vec::new();
        let origin = SocketAddrV4::new(n.destination_ip, n.destination_port);
        let video = |mpd_url: &str| VideoSession { client: n.source_ip, mpd_url: mpd_url.to_string() };

        if instance.icn_type.prefetches() && class == UrlClass::Mpd && !from_prefetcher {
            let known = self.manifests.contains_key(&n.uri);
            if !known && self.pending_mpd.insert(n.uri.clone()) {
                actions.push(ControlAction::FetchMpd { instance_id, mpd_url: n.uri.clone(), host: n.hostname.clone(), origin });
            }
            if known && instance.icn_type == IcnType::DistributedSvcPrefetch {
                self.ensure_video(instance_id, &video(&n.uri))?;
            }
        }

        let nearest_cache = self.cache_order(instance_id, n.source_ip).first().copied().expect("can_serve implies a cache");
        let cache_id = match (&class, &manifest) {
            _ if from_prefetcher => self.prefetch_targets.get(&n.uri).copied().unwrap_or(nearest_cache),
            (UrlClass::Segment { repr_id, .. }, Some(m)) if instance.icn_type == IcnType::DistributedSvcPrefetch => {
                let alloc = self.ensure_video(instance_id, &video(&m.mpd_url))?;
                alloc.and_then(|a| a.cache_for(*repr_id)).unwrap_or(nearest_cache)
            }
            _ => nearest_cache,
        };

        if let (UrlClass::Segment { repr_id, seg_no }, Some(m)) = (&class, &manifest) {
            if instance.icn_type.prefetches() && !from_prefetcher {
                actions.extend(self.plan(instance_id, m, &video(&m.mpd_url), *repr_id, *seg_no, nearest_cache, origin, ctx.now_ms)?);
            }
        }

        let cache = self.registry.endpoint(cache_id).expect("registered cache").clone();
        let upstream = SessionKey::new(SocketAddrV4::new(proxy.ip, n.source_port), origin);
        self.dataplane.install_proxy_to_cache(upstream, &proxy.station(), &cache.station(), ctx.flow_activation_ms)?;
        Ok(ProxyOutcome {
            response: SteeringResponse {
                decision: Self::decision_token(&n.uri, &client_key),
                connect_to: origin,
                target: SteeringTarget::Cache { endpoint_id: cache.endpoint_id, ip: cache.ip, port: cache.port },
                session_key: Some(upstream),
            },
            actions,
            from_prefetcher,
            class,
        })
    }

    fn ensure_video(&mut self, instance_id: InstanceId, session: &VideoSession) -> Result<Option<AllocationMap>, ControlError> {
        if let Some(a) = self.videos.get(session) {
            return Ok(a.clone());
        }
        let Some(m) = self.manifests.get(&session.mpd_url).cloned() else { return Ok(None) };
        let icn_type = self.registry.instance(instance_id).map(|i| i.icn_type);
        let allocation = if icn_type == Some(IcnType::DistributedSvcPrefetch) {
            let caches = self.cache_order(instance_id, session.client);
            Some(allocate_for_manifest(instance_id, &m, &caches)?)
        } else {
            None
        };
        self.videos.insert(session.clone(), allocation.clone());
        Ok(allocation)
    }

    #[allow(clippy::too_many_arguments)]
    fn plan(
        &mut self,
        instance_id: InstanceId,
        manifest: &MpdManifest,
        session: &VideoSession,
        repr_id: u32,
        seg_no: u32,
        nearest_cache: EndpointId,
        origin: SocketAddrV4,
        now_ms: f64,
    ) -> Result<Vec<ControlAction>, ControlError> {
        let Some(prefetcher) = self.nearest(instance_id, Role::Prefetcher, self.attachment_of(session.client).as_ref()) else {
            return Ok(vec![]);
        };
        let allocation = self.ensure_video(instance_id, session)?;
        let placement = match &allocation {
            Some(a) => Placement::Distributed(a),
            None => Placement::Single(nearest_cache),
        };
        let server = origin.ip().to_string();
        let req = PlanRequest {
            manifest,
            session,
            repr_id,
            seg_no,
            lookahead: self.policy.lookahead,
            placement,
            server: &server,
            port: origin.port(),
            now_ms,
        };
        let plan = plan_prefetch(&req, &mut self.ledger)?;
        Ok(plan
            .commands
            .into_iter()
            .map(|f| {
                self.prefetch_targets.insert(f.command.uri.clone(), f.target_cache);
                ControlAction::SendPrefetch {
                    prefetcher: prefetcher.endpoint_id,
                    fetch: QueuedFetch { session: session.clone(), command: f.command, target_cache: f.target_cache },
                }
            })
            .collect())
    }

    /// Stores the manifest the controller downloaded for analysis.
    pub fn on_mpd_fetched(&mut self, mpd_url: &str, body: &[u8]) -> Result<Arc<MpdManifest>, MpdError> {
        self.pending_mpd.remove(mpd_url);
        let m = Arc::new(parse_mpd(mpd_url, body)?);
        self.manifests.insert(mpd_url.to_string(), m.clone());
        Ok(m)
    }

    pub fn on_mpd_failed(&mut self, mpd_url: &str) {
        self.pending_mpd.remove(mpd_url);
    }

    /// Proxy reports the session finished; steering flows go away.
    pub fn end_session(&mut self, upstream: &SessionKey) -> bool {
        self.dataplane.teardown_session(upstream).is_some()
    }
}

fn reg_err(e: RegistryError) -> ManagementResponse {
    ManagementResponse::error(status_for(&e), e)
}

/// Delivery of prefetch orders to a prefetcher.
pub trait PrefetchTransport {
    /// `Ok(false)` means the prefetcher dropped it as a duplicate.
    fn deliver(&mut self, prefetcher: &NetworkEndpoint, fetch: QueuedFetch) -> Result<bool, String>;
}

impl PrefetchTransport for crate::prefetch::Prefetcher {
    fn deliver(&mut self, _prefetcher: &NetworkEndpoint, fetch: QueuedFetch) -> Result<bool, String> {
        Ok(self.enqueue(fetch))
    }
}

/// Sends one order; failures are logged and reported as a negative ack.
pub fn send_prefetch<T: PrefetchTransport + ?Sized>(transport: &mut T, prefetcher: &NetworkEndpoint, fetch: QueuedFetch) -> bool {
    let uri = fetch.command.uri.clone();
    match transport.deliver(prefetcher, fetch) {
        Ok(accepted) => accepted,
        Err(e) => {
            log::warn!("prefetcher {} unreachable for {uri}: {e}", prefetcher.endpoint_id);
            false
        }
    }
}

/// Body of a prefetch order on the wire.
pub fn prefetch_params(cmd: &PrefetchCommand) -> Params {
    Params::from([
        ("uri".to_string(), cmd.uri.clone()),
        ("server".to_string(), cmd.server.clone()),
        ("port".to_string(), cmd.port.to_string()),
    ])
}
