//! Scenario runner: one deterministic event loop per seeded run.
//!
//! A request walks the installed flows hop by hop, so redirection, steering
//! and the address rewrites are exercised on every connection. Payloads move
//! through the fluid link model once their first byte has crossed the path.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddrV4};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::cache::{CacheError, CacheState, Lookup, ServeOutcome};
use crate::control::{
    send_prefetch, ControlAction, ControlContext, IcnService, Method, PrefetchPolicy, ProxyRequestNotification, SteeringResponse, SteeringTarget,
    PATH_ICN,
};
use crate::dash::{parse_mpd, MpdError, MpdManifest, UrlClass};
use crate::dataplane::{Dataplane, Header, Topology, TopologyError, Walk};
use crate::net::{MacAddr, SessionKey, IPPROTO_TCP};
use crate::prefetch::{FetchOutcome, Prefetcher, QueuedFetch};
use crate::proxy::{AcceptQueue, Attempt, ProxyError, ProxySession};
use crate::registry::{EndpointId, InstanceId, NetworkEndpoint, Role};
use crate::sim::config::{ConfigError, ScenarioConfig, ScenarioKind};
use crate::sim::engine::EventQueue;
use crate::sim::eventlog::{
    CacheLabel, CacheTotalsRecord, CompletedRecord, EventLog, MpdAnalysedRecord, PrefetchIdleRecord, Requester, RunEndRecord, RunStartRecord,
    CACHE_TOTALS, COMPLETED, MPD_ANALYSED, PREFETCH_IDLE, RUN_END, RUN_START,
};
use crate::sim::metrics::{MetricsError, RunMetrics, ScenarioReport};
use crate::sim::network::{Network, Resource, TransferId};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("manifest: {0}")]
    Manifest(#[from] MpdError),
    #[error("manifest has no representation {0}")]
    FixtureMismatch(u32),
    #[error("bootstrap {path} answered {status}: {body}")]
    Bootstrap { path: String, status: u16, body: String },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("transparency violated: {0}")]
    Transparency(String),
    #[error("no object for {0}")]
    UnknownObject(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Everything shared by the runs of one scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    topology: Topology,
    manifest_bytes: Arc<Vec<u8>>,
    manifest: Arc<MpdManifest>,
    chain: Vec<u32>,
    keep_trace: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub run: usize,
    pub seed: u64,
    pub log: EventLog,
    pub metrics: RunMetrics,
    /// Per cache label, the cache's access log lines.
    pub access_logs: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub report: ScenarioReport,
    pub runs: Vec<RunOutput>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let topology = Topology::from_config(&config.topology)?;
        let manifest_bytes = config.manifest_bytes()?;
        let manifest = parse_mpd(&config.content.mpd_url, &manifest_bytes)?;
        if manifest.representation(config.client.representation).is_none() {
            return Err(SimError::FixtureMismatch(config.client.representation));
        }
        let chain = manifest.resolve_chain(config.client.representation)?.into_iter().collect();
        Ok(Scenario { config, topology, manifest_bytes: Arc::new(manifest_bytes), manifest: Arc::new(manifest), chain, keep_trace: true })
    }

    /// Keeps only record lines in the event log.
    pub fn records_only(mut self) -> Self {
        self.keep_trace = false;
        self
    }

    pub fn manifest(&self) -> &MpdManifest {
        &self.manifest
    }

    /// Layers the client requests per segment, ascending.
    pub fn chain(&self) -> &[u32] {
        &self.chain
    }

    pub fn requests_per_run(&self) -> usize {
        self.chain.len() * self.manifest.segment_count() + 1
    }

    pub fn run(&self, run: usize, seed: u64) -> Result<RunOutput, SimError> {
        let mut world = World::build(self, run, seed)?;
        world.execute()?;
        world.finish()
    }

    pub fn run_all_sequential(&self) -> Result<Vec<RunOutput>, SimError> {
        self.config.seeds().into_iter().enumerate().map(|(i, s)| self.run(i, s)).collect()
    }

    #[cfg(feature = "parallel")]
    pub fn run_all_parallel(&self) -> Result<Vec<RunOutput>, SimError> {
        use rayon::prelude::*;
        let seeds: Vec<(usize, u64)> = self.config.seeds().into_iter().enumerate().collect();
        seeds.into_par_iter().map(|(i, s)| self.run(i, s)).collect()
    }

    /// Runs every seed, in parallel when the `parallel` feature is on.
    pub fn run_all(&self) -> Result<Vec<RunOutput>, SimError> {
        #[cfg(feature = "parallel")]
        return self.run_all_parallel();
        #[cfg(not(feature = "parallel"))]
        return self.run_all_sequential();
    }

    pub fn output(&self, runs: Vec<RunOutput>) -> ScenarioOutput {
        let report = ScenarioReport {
            scenario: self.config.name.clone(),
            kind: self.config.kind,
            runs: runs.iter().map(|r| r.metrics.clone()).collect(),
        };
        ScenarioOutput { report, runs }
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutput, SimError> {
    let scenario = Scenario::new(config.clone())?;
    let runs = scenario.run_all()?;
    Ok(scenario.output(runs))
}

/// Controller for `config`, with its bootstrap applied. Service mode uses
/// this to stand up the northbound API outside the simulator.
pub fn bootstrapped_service(config: &ScenarioConfig) -> Result<(IcnService, Option<InstanceId>), SimError> {
    config.validate()?;
    let topology = Topology::from_config(&config.topology)?;
    let mut svc = IcnService::new(Dataplane::new(topology), PrefetchPolicy { lookahead: config.prefetch.lookahead });
    let instance = match config.kind.icn_type() {
        Some(t) => Some(bootstrap(&mut svc, config, t.as_str())?),
        None => None,
    };
    Ok((svc, instance))
}

type ReqId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Leg {
    /// Origin to cache after a miss.
    Fill,
    /// Serving node to requester.
    Deliver,
}

#[derive(Clone, Debug)]
enum Ev {
    Issue(ReqId),
    ProxyAccept(ReqId),
    ControllerNotify(ReqId),
    ProxySteered(ReqId, SteeringResponse),
    ConnectAttempt(ReqId),
    ServerReceive(ReqId),
    OriginReceive(ReqId),
    TransferStart(ReqId, Leg),
    NetWake(u64),
    MpdAnalysed(String),
    PrefetchOrder(QueuedFetch),
}

impl Ev {
    fn kind(&self) -> &'static str {
        match self {
            Ev::Issue(_) => "ClientRequest",
            Ev::ProxyAccept(_) => "ProxyAccept",
            Ev::ControllerNotify(_) => "ProxyNotify",
            Ev::ProxySteered(..) => "FlowInstalled",
            Ev::ConnectAttempt(_) => "ConnectAttempt",
            Ev::ServerReceive(_) => "CacheServe",
            Ev::OriginReceive(_) => "OriginServe",
            Ev::TransferStart(..) => "TransferStart",
            Ev::NetWake(_) => "TransferComplete",
            Ev::MpdAnalysed(_) => "MpdFetch",
            Ev::PrefetchOrder(..) => "PrefetchIssued",
        }
    }
}

/// Who answers the request once the proxy has bound upstream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Server {
    Cache(EndpointId),
    Origin,
}

#[derive(Clone, Debug)]
struct Hop {
    latency_ms: f64,
    /// Resources used by data flowing back toward the requester.
    back: Vec<Resource>,
}

#[derive(Clone, Debug)]
struct Req {
    requester: Requester,
    host: String,
    header: Header,
    url: String,
    repr_seg: Option<(u32, u32)>,
    size: u64,
    issued_ms: f64,
    session: Option<ProxySession>,
    ctl_draw_ms: f64,
    notified_ms: f64,
    controller_ms: Option<f64>,
    server: Option<Server>,
    upstream: Option<SessionKey>,
    /// Requester to proxy, or requester to origin when not proxied.
    first: Option<Hop>,
    /// Proxy to the serving node.
    second: Option<Hop>,
    /// Cache to origin on a miss.
    fill: Option<Hop>,
    result: Option<ServeOutcome>,
    attempts: u32,
}

struct ClientState {
    host: String,
    ip: Ipv4Addr,
    cursor: usize,
    first_segment_ms: Option<f64>,
    segment_ms: f64,
}

struct PrefetcherNode {
    endpoint: NetworkEndpoint,
    host: String,
    queue: Prefetcher,
}

struct ProxyNode {
    endpoint: NetworkEndpoint,
    host: String,
    active: usize,
    accept: AcceptQueue<ReqId>,
}

struct World<'a> {
    sc: &'a Scenario,
    run: usize,
    seed: u64,
    svc: IcnService,
    queue: EventQueue<Ev>,
    net: Network,
    net_version: u64,
    transfers: BTreeMap<TransferId, (ReqId, Leg)>,
    rng: ChaCha8Rng,
    caches: BTreeMap<EndpointId, CacheState>,
    cache_hosts: BTreeMap<EndpointId, String>,
    labels: Vec<CacheLabel>,
    proxy: Option<ProxyNode>,
    prefetcher: Option<PrefetcherNode>,
    origin_host: String,
    origin: SocketAddrV4,
    client: ClientState,
    reqs: Vec<Req>,
    log: EventLog,
    ordinal: u64,
    events: u64,
    ports: [u16; 3],
}

const CLIENT_PORTS: u16 = 40000;
const PREFETCH_PORTS: u16 = 50000;
const CACHE_PORTS: u16 = 60000;
const PORT_SPAN: u16 = 5000;

fn host_of_ip(topo: &Topology, ip: Ipv4Addr) -> Option<String> {
    topo.host_by_ip(ip).map(|h| h.id.clone())
}

impl<'a> World<'a> {
    fn build(sc: &'a Scenario, run: usize, seed: u64) -> Result<Self, SimError> {
        let cfg = &sc.config;
        let mut svc = IcnService::new(Dataplane::new(sc.topology.clone()), PrefetchPolicy { lookahead: cfg.prefetch.lookahead });
        let instance = match cfg.kind.icn_type() {
            Some(t) => Some(bootstrap(&mut svc, cfg, t.as_str())?),
            None => None,
        };
        let topo = svc.dataplane().topology().clone();
        let origin_h = topo.host(&cfg.content.origin).expect("validated").clone();
        let client_h = topo.host(&cfg.client.host).expect("validated").clone();

        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut caches = BTreeMap::new();
        let mut cache_hosts = BTreeMap::new();
        let mut labels = Vec::new();
        let mut proxy = None;
        let mut prefetcher = None;
        if let Some(inst) = instance {
            let reg = svc.registry();
            for ep in reg.endpoints_of(inst, Role::Cache) {
                let state = CacheState::new(ep.endpoint_id, cfg.cache.capacity, cfg.cache.admission_failure_rate, master.next_u64())?;
                caches.insert(ep.endpoint_id, state);
                cache_hosts.insert(ep.endpoint_id, host_of_ip(&topo, ep.ip).expect("attached"));
            }
            for (i, id) in svc.cache_order(inst, client_h.ip).into_iter().enumerate() {
                labels.push(CacheLabel { cache: id, label: format!("C{}", i + 1) });
            }
            if let Some(ep) = reg.endpoints_of(inst, Role::Proxy).first() {
                proxy = Some(ProxyNode {
                    endpoint: (*ep).clone(),
                    host: host_of_ip(&topo, ep.ip).expect("attached"),
                    active: 0,
                    accept: AcceptQueue::new(cfg.proxy.accept_queue),
                });
            }
            let prefetches = reg.instance(inst).map(|i| i.icn_type.prefetches()).unwrap_or(false);
            if let (true, Some(ep)) = (prefetches, reg.endpoints_of(inst, Role::Prefetcher).first()) {
                prefetcher = Some(PrefetcherNode {
                    endpoint: (*ep).clone(),
                    host: host_of_ip(&topo, ep.ip).expect("attached"),
                    queue: Prefetcher::new(ep.endpoint_id, cfg.prefetch.parallelism, cfg.prefetch.mode),
                });
            }
        }
        if cfg.kind == ScenarioKind::FullCache {
            let catalog: Vec<(&str, u64)> = std::iter::once((cfg.content.mpd_url.as_str(), sc.manifest_bytes.len() as u64))
                .chain(sc.manifest.url_index.iter().map(|(url, (r, _))| {
                    (url.as_str(), sc.manifest.representation(*r).expect("indexed").segment_bytes())
                }))
                .collect();
            for c in caches.values_mut() {
                c.warm(catalog.iter().copied());
            }
        }
        let rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let segment_ms = sc.manifest.representation(cfg.client.representation).expect("checked").timing.seconds() * 1000.0;
        let net = Network::new(&topo);
        Ok(World {
            sc,
            run,
            seed,
            svc,
            queue: EventQueue::new(),
            net,
            net_version: 0,
            transfers: BTreeMap::new(),
            rng,
            caches,
            cache_hosts,
            labels,
            proxy,
            prefetcher,
            origin_host: origin_h.id.clone(),
            origin: SocketAddrV4::new(origin_h.ip, cfg.content.origin_port),
            client: ClientState { host: client_h.id.clone(), ip: client_h.ip, cursor: 0, first_segment_ms: None, segment_ms },
            reqs: Vec::new(),
            log: EventLog::new(sc.keep_trace),
            ordinal: 0,
            events: 0,
            ports: [CLIENT_PORTS, PREFETCH_PORTS, CACHE_PORTS],
        })
    }

    fn next_port(&mut self, which: usize) -> u16 {
        let base = [CLIENT_PORTS, PREFETCH_PORTS, CACHE_PORTS][which];
        let p = self.ports[which];
        self.ports[which] = base + (p - base + 1) % PORT_SPAN;
        p
    }

    fn now(&self) -> f64 {
        self.queue.now()
    }

    fn execute(&mut self) -> Result<(), SimError> {
        let start = RunStartRecord {
            scenario: self.sc.config.name.clone(),
            kind: self.sc.config.kind,
            run: self.run,
            seed: self.seed,
            client: self.client.ip,
            caches: self.labels.clone(),
            video_duration_ms: self.sc.manifest.media_duration * 1000.0,
            initial_backoff_ms: self.sc.config.proxy.backoff.initial_ms,
        };
        self.log.record(0.0, 0, RUN_START, &start);
        let url = self.sc.config.content.mpd_url.clone();
        self.issue_request(Requester::Client, url, None)?;
        while let Some((time, ordinal, ev)) = self.queue.pop() {
            self.ordinal = ordinal;
            self.events += 1;
            if !matches!(ev, Ev::NetWake(_)) {
                let payload = match &ev {
                    Ev::Issue(r) => json!({ "req": r, "url": self.reqs[*r].url }),
                    Ev::ProxySteered(r, s) => json!({ "req": r, "target": s.target }),
                    Ev::ProxyAccept(r) | Ev::ControllerNotify(r) | Ev::ConnectAttempt(r) | Ev::ServerReceive(r) | Ev::OriginReceive(r) => {
                        json!({ "req": r })
                    }
                    Ev::TransferStart(r, leg) => json!({ "req": r, "leg": format!("{leg:?}") }),
                    Ev::MpdAnalysed(u) => json!({ "url": u }),
                    Ev::PrefetchOrder(f) => json!({ "uri": f.command.uri, "cache": f.target_cache }),
                    Ev::NetWake(_) => unreachable!(),
                };
                self.log.trace(time, ordinal, ev.kind(), payload);
            }
            self.dispatch(ev)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Issue(r) => self.on_issue(r),
            Ev::ProxyAccept(r) => self.on_proxy_accept(r),
            Ev::ControllerNotify(r) => self.on_controller_notify(r),
            Ev::ProxySteered(r, s) => self.on_proxy_steered(r, s),
            Ev::ConnectAttempt(r) => self.on_connect_attempt(r),
            Ev::ServerReceive(r) => self.on_server_receive(r),
            Ev::OriginReceive(r) => self.on_origin_receive(r),
            Ev::TransferStart(r, leg) => {
                let req = &self.reqs[r];
                let mut res: Vec<Resource> = Vec::new();
                let bytes = match leg {
                    Leg::Fill => {
                        res.extend(&req.fill.as_ref().expect("miss path").back);
                        req.size
                    }
                    Leg::Deliver => {
                        if let Some(h) = &req.second {
                            res.extend(&h.back);
                        }
                        res.extend(&req.first.as_ref().expect("connected").back);
                        match (&self.prefetcher, req.requester) {
                            (Some(p), Requester::Prefetcher) => p.queue.fetch_bytes(req.size),
                            _ => req.size,
                        }
                    }
                };
                let id = self.net.start(self.now(), res, bytes);
                self.transfers.insert(id, (r, leg));
                self.wake_network();
                Ok(())
            }
            Ev::NetWake(v) => {
                if v != self.net_version {
                    return Ok(());
                }
                let now = self.now();
                let done = self.net.complete_due(now);
                for id in done {
                    let (r, leg) = self.transfers.remove(&id).expect("tracked transfer");
                    self.log.trace(now, self.ordinal, "TransferComplete", json!({ "req": r, "leg": format!("{leg:?}") }));
                    self.on_transfer_done(r, leg)?;
                }
                self.wake_network();
                Ok(())
            }
            Ev::MpdAnalysed(url) => {
                match self.svc.on_mpd_fetched(&url, &self.sc.manifest_bytes) {
                    Ok(m) => {
                        let rec = MpdAnalysedRecord { url, representations: m.representations.len(), segments: m.segment_count() };
                        self.log.record(self.now(), self.ordinal, MPD_ANALYSED, &rec);
                    }
                    Err(e) => {
                        log::warn!("manifest analysis failed: {e}");
                        self.svc.on_mpd_failed(&url);
                    }
                }
                Ok(())
            }
            Ev::PrefetchOrder(fetch) => {
                if let Some(p) = &mut self.prefetcher {
                    let ep = p.endpoint.clone();
                    send_prefetch(&mut p.queue, &ep, fetch);
                }
                self.pump_prefetcher()
            }
        }
    }

    fn wake_network(&mut self) {
        self.net_version += 1;
        if let Some((t, _)) = self.net.next_completion() {
            self.queue.schedule(t, Ev::NetWake(self.net_version));
        }
    }

    fn walk(&self, from: &str, header: Header) -> Result<Walk, SimError> {
        Ok(self.svc.dataplane().packet_walk(from, header, self.now())?)
    }

    fn host_mac(&self, ip: Ipv4Addr) -> MacAddr {
        self.svc.dataplane().topology().host_by_ip(ip).map(|h| h.mac).unwrap_or_else(|| MacAddr::from_ipv4(ip))
    }

    fn header(&self, src: SocketAddrV4, dst: SocketAddrV4) -> Header {
        Header {
            eth_src: self.host_mac(*src.ip()),
            eth_dst: self.host_mac(*dst.ip()),
            ip_src: *src.ip(),
            ip_dst: *dst.ip(),
            ip_proto: IPPROTO_TCP,
            tcp_src: src.port(),
            tcp_dst: dst.port(),
        }
    }

    /// Walks the reply of a delivered connection back to `expect_host` and
    /// checks the sender sees `expect_src` as its peer.
    fn reply_path(&self, walk: &Walk, expect_host: &str, expect_src: SocketAddrV4) -> Result<Hop, SimError> {
        let (at, seen) = walk.delivered_to().expect("caller checked delivery");
        let back = self.walk(at, seen.reversed())?;
        match back.delivered_to() {
            Some((h, hdr)) if h == expect_host && hdr.src() == expect_src => {
                Ok(Hop { latency_ms: back.latency_ms(), back: back.links.clone() })
            }
            other => Err(SimError::Transparency(format!(
                "reply from {at} reached {other:?}, expected {expect_host} seeing {expect_src}"
            ))),
        }
    }

    fn object_size(&self, url: &str) -> Result<(u64, Option<(u32, u32)>), SimError> {
        if url == self.sc.config.content.mpd_url {
            return Ok((self.sc.manifest_bytes.len() as u64, None));
        }
        match self.sc.manifest.classify_url(url) {
            UrlClass::Segment { repr_id, seg_no } => {
                Ok((self.sc.manifest.representation(repr_id).expect("indexed").segment_bytes(), Some((repr_id, seg_no))))
            }
            _ => Err(SimError::UnknownObject(url.to_string())),
        }
    }

    fn issue_request(&mut self, requester: Requester, url: String, fetch: Option<QueuedFetch>) -> Result<ReqId, SimError> {
        self.issue_request_at(self.now(), requester, url, fetch)
    }

    fn issue_request_at(&mut self, at: f64, requester: Requester, url: String, fetch: Option<QueuedFetch>) -> Result<ReqId, SimError> {
        let (size, repr_seg) = self.object_size(&url)?;
        let (host, src) = match requester {
            Requester::Client => (self.client.host.clone(), SocketAddrV4::new(self.client.ip, self.next_port(0))),
            Requester::Prefetcher => {
                let p = self.prefetcher.as_ref().expect("prefetcher request without prefetcher");
                let (h, ip) = (p.host.clone(), p.endpoint.ip);
                (h, SocketAddrV4::new(ip, self.next_port(1)))
            }
        };
        let dst = match &fetch {
            Some(f) => SocketAddrV4::new(f.command.server.parse().unwrap_or(*self.origin.ip()), f.command.port),
            None => self.origin,
        };
        let header = self.header(src, dst);
        let id = self.reqs.len();
        self.reqs.push(Req {
            requester,
            host,
            header,
            url,
            repr_seg,
            size,
            issued_ms: at,
            session: None,
            ctl_draw_ms: 0.0,
            notified_ms: 0.0,
            controller_ms: None,
            server: None,
            upstream: None,
            first: None,
            second: None,
            fill: None,
            result: None,
            attempts: 0,
        });
        self.queue.schedule(at, Ev::Issue(id));
        Ok(id)
    }

    fn on_issue(&mut self, r: ReqId) -> Result<(), SimError> {
        let (host, header) = (self.reqs[r].host.clone(), self.reqs[r].header);
        let walk = self.walk(&host, header)?;
        let Some((at, seen)) = walk.delivered_to().map(|(a, s)| (a.to_string(), *s)) else {
            return self.fail(r, "request dropped in the fabric");
        };
        let proxy = self.proxy.as_ref().map(|p| (p.host.clone(), p.endpoint.station().socket()));
        let latency = walk.latency_ms();
        match proxy {
            Some((proxy_host, proxy_sock)) if at == proxy_host => {
                if seen.dst() != proxy_sock {
                    return Err(SimError::Transparency(format!("proxy received {} instead of {proxy_sock}", seen.dst())));
                }
                let hop = self.reply_path(&walk, &host, header.dst())?;
                self.reqs[r].first = Some(hop);
                self.queue.schedule_in(3.0 * latency, Ev::ProxyAccept(r));
            }
            _ if at == self.origin_host => {
                let hop = self.reply_path(&walk, &host, header.dst())?;
                self.reqs[r].first = Some(hop);
                self.reqs[r].server = Some(Server::Origin);
                self.queue.schedule_in(3.0 * latency, Ev::ServerReceive(r));
            }
            _ => return self.fail(r, "request delivered to an unexpected host"),
        }
        Ok(())
    }

    fn on_proxy_accept(&mut self, r: ReqId) -> Result<(), SimError> {
        let p = self.proxy.as_mut().expect("proxied");
        if p.accept.offer(r).is_err() {
            return self.fail(r, "proxy accept queue full");
        }
        p.accept.take();
        p.active += 1;
        let req = &self.reqs[r];
        let key = SessionKey::new(req.header.src(), req.header.dst());
        let mut session = ProxySession::accept(key, req.header.eth_src);
        let raw = format!("GET {} HTTP/1.1\r\nHost: {}\r\nConnection: close\r\n\r\n", req.url, self.sc.config.content.host);
        let result = session.on_client_request(raw.as_bytes());
        self.reqs[r].session = Some(session);
        match result {
            Ok(_) => {
                let c = &self.sc.config.controller;
                let draw = c.interaction_ms - c.jitter_ms + self.rng.random::<f64>() * 2.0 * c.jitter_ms;
                let req = &mut self.reqs[r];
                req.ctl_draw_ms = draw;
                req.notified_ms = self.queue.now();
                self.queue.schedule_in(draw / 2.0, Ev::ControllerNotify(r));
                Ok(())
            }
            Err(e) => self.fail(r, &e.to_string()),
        }
    }

    fn notification(&self, r: ReqId) -> ProxyRequestNotification {
        let req = &self.reqs[r];
        let s = req.session.as_ref().expect("accepted");
        ProxyRequestNotification {
            uri: req.url.clone(),
            hostname: self.sc.config.content.host.clone(),
            smac: s.client_mac,
            source_ip: s.session_key.src_ip,
            destination_ip: s.session_key.dst_ip,
            protocol: IPPROTO_TCP,
            source_port: s.session_key.src_port,
            destination_port: s.session_key.dst_port,
        }
    }

    fn on_controller_notify(&mut self, r: ReqId) -> Result<(), SimError> {
        let now = self.now();
        let activation = now + self.rng.random::<f64>() * self.sc.config.controller.install_delay_max_ms;
        let n = self.notification(r);
        match self.svc.handle_proxy_request(&n, &ControlContext { now_ms: now, flow_activation_ms: activation }) {
            Ok(outcome) => {
                for action in outcome.actions {
                    match action {
                        ControlAction::FetchMpd { mpd_url, .. } => {
                            let at = now + self.controller_fetch_ms();
                            self.queue.schedule(at, Ev::MpdAnalysed(mpd_url));
                        }
                        ControlAction::SendPrefetch { fetch, .. } => {
                            self.queue.schedule_in(self.sc.config.controller.order_latency_ms, Ev::PrefetchOrder(fetch));
                        }
                    }
                }
                let half = self.reqs[r].ctl_draw_ms / 2.0;
                self.queue.schedule_in(half, Ev::ProxySteered(r, outcome.response));
                Ok(())
            }
            Err(e) if e.is_retryable() => {
                let wait = self.sc.config.proxy.backoff.initial_ms;
                self.queue.schedule_in(wait, Ev::ControllerNotify(r));
                Ok(())
            }
            Err(e) => self.fail(r, &e.to_string()),
        }
    }

    /// Controller download of the manifest plus its analysis.
    fn controller_fetch_ms(&self) -> f64 {
        let topo = self.svc.dataplane().topology();
        let (Some(p), Some(o)) = (self.proxy.as_ref(), topo.host(&self.origin_host)) else { return 0.0 };
        let one_way = topo
            .attachment_latency_us(&p.endpoint.location, &o.attachment)
            .map(|us| us as f64 / 1000.0)
            .unwrap_or(0.0)
            + topo.link(o.link).latency_ms();
        let transfer = self.sc.manifest_bytes.len() as f64 / topo.link(o.link).bytes_per_ms();
        4.0 * one_way + transfer + self.sc.config.controller.mpd_analysis_ms
    }

    fn on_proxy_steered(&mut self, r: ReqId, steering: SteeringResponse) -> Result<(), SimError> {
        let now = self.now();
        let backoff = self.sc.config.proxy.backoff;
        let req = &mut self.reqs[r];
        req.controller_ms = Some(now - req.notified_ms);
        req.server = Some(match steering.target {
            SteeringTarget::Cache { endpoint_id, .. } => Server::Cache(endpoint_id),
            SteeringTarget::DefaultGateway => Server::Origin,
        });
        req.upstream = steering.session_key;
        let session = req.session.as_mut().expect("accepted");
        if let Err(e) = session.on_steering(steering, &backoff) {
            return self.fail(r, &e.to_string());
        }
        self.on_connect_attempt(r)
    }

    fn on_connect_attempt(&mut self, r: ReqId) -> Result<(), SimError> {
        let now = self.now();
        let backoff = self.sc.config.proxy.backoff;
        let p = self.proxy.as_ref().expect("proxied");
        let (proxy_host, proxy_ip) = (p.host.clone(), p.endpoint.ip);
        let req = &self.reqs[r];
        let upstream = req.session.as_ref().and_then(|s| s.upstream_key(proxy_ip)).expect("steered");
        let header = self.header(upstream.src(), upstream.dst());
        let walk = self.walk(&proxy_host, header)?;
        let (expect_host, expect_dst) = match req.server.expect("steered") {
            Server::Cache(id) => {
                let ep = self.svc.registry().endpoint(id).expect("registered cache");
                (self.cache_hosts[&id].clone(), ep.station().socket())
            }
            Server::Origin => (self.origin_host.clone(), upstream.dst()),
        };
        let accepted = matches!(walk.delivered_to(), Some((h, hdr)) if h == expect_host && hdr.dst() == expect_dst);
        let session = self.reqs[r].session.as_mut().expect("accepted");
        match session.attempt(now, accepted, &backoff) {
            Attempt::Connected { attempts } => {
                let hop = self.reply_path(&walk, &proxy_host, upstream.dst())?;
                let req = &mut self.reqs[r];
                req.attempts = attempts;
                req.second = Some(hop);
                let processing = match req.server {
                    Some(Server::Cache(_)) => self.sc.config.cache.processing_ms,
                    _ => 0.0,
                };
                self.queue.schedule_in(3.0 * walk.latency_ms() + processing, Ev::ServerReceive(r));
                Ok(())
            }
            Attempt::RetryAt(t) => {
                self.queue.schedule(t, Ev::ConnectAttempt(r));
                Ok(())
            }
            Attempt::Failed(attempts) => {
                self.reqs[r].attempts = attempts;
                let e = ProxyError::MaxRetriesExceeded { attempts };
                self.fail(r, &e.to_string())
            }
        }
    }

    /// Latency from the serving node back to the requester.
    fn back_latency(&self, r: ReqId) -> f64 {
        let req = &self.reqs[r];
        req.first.as_ref().map(|h| h.latency_ms).unwrap_or(0.0) + req.second.as_ref().map(|h| h.latency_ms).unwrap_or(0.0)
    }

    fn on_server_receive(&mut self, r: ReqId) -> Result<(), SimError> {
        let now = self.now();
        match self.reqs[r].server.expect("bound") {
            Server::Origin => {
                self.queue.schedule_in(self.back_latency(r), Ev::TransferStart(r, Leg::Deliver));
            }
            Server::Cache(id) => {
                let url = self.reqs[r].url.clone();
                let cache = self.caches.get_mut(&id).expect("cache state");
                match cache.lookup(now, &url) {
                    Lookup::Hit { .. } => {
                        self.reqs[r].result = Some(ServeOutcome::Hit);
                        self.queue.schedule_in(self.back_latency(r), Ev::TransferStart(r, Leg::Deliver));
                    }
                    Lookup::Miss => {
                        let cache_host = self.cache_hosts[&id].clone();
                        let ep = self.svc.registry().endpoint(id).expect("registered");
                        let ip = ep.ip;
                        let src = SocketAddrV4::new(ip, self.next_port(2));
                        let dst = self.reqs[r].header.dst();
                        let walk = self.walk(&cache_host, self.header(src, dst))?;
                        match walk.delivered_to() {
                            Some((h, _)) if h == self.origin_host => {}
                            _ => {
                                let cache = self.caches.get_mut(&id).expect("cache state");
                                let e = cache.abort_miss(now, &url);
                                return self.fail(r, &e.to_string());
                            }
                        }
                        let hop = self.reply_path(&walk, &cache_host, dst)?;
                        self.reqs[r].fill = Some(hop);
                        self.queue.schedule_in(3.0 * walk.latency_ms(), Ev::OriginReceive(r));
                    }
                }
            }
        }
        Ok(())
    }

    fn on_origin_receive(&mut self, r: ReqId) -> Result<(), SimError> {
        let latency = self.reqs[r].fill.as_ref().expect("miss path").latency_ms;
        self.queue.schedule_in(latency, Ev::TransferStart(r, Leg::Fill));
        Ok(())
    }

    fn on_transfer_done(&mut self, r: ReqId, leg: Leg) -> Result<(), SimError> {
        let now = self.now();
        match leg {
            Leg::Fill => {
                let Some(Server::Cache(id)) = self.reqs[r].server else { unreachable!("fill without cache") };
                let (url, size) = (self.reqs[r].url.clone(), self.reqs[r].size);
                let result = self.caches.get_mut(&id).expect("cache state").complete_miss(now, &url, size);
                self.reqs[r].result = Some(result);
                self.queue.schedule_in(self.back_latency(r), Ev::TransferStart(r, Leg::Deliver));
                Ok(())
            }
            Leg::Deliver => self.complete(r, false),
        }
    }

    fn fail(&mut self, r: ReqId, why: &str) -> Result<(), SimError> {
        log::debug!("request {r} ({}) failed: {why}", self.reqs[r].url);
        if let Some(s) = self.reqs[r].session.as_mut() {
            s.close();
        }
        self.complete(r, true)
    }

    fn complete(&mut self, r: ReqId, failed: bool) -> Result<(), SimError> {
        let now = self.now();
        if let Some(up) = self.reqs[r].upstream.take() {
            self.svc.end_session(&up);
        }
        if self.reqs[r].session.is_some() {
            if let Some(p) = self.proxy.as_mut() {
                p.active = p.active.saturating_sub(1);
            }
        }
        let req = &self.reqs[r];
        let cache = match req.server {
            Some(Server::Cache(id)) => Some(id),
            _ => None,
        };
        let rec = CompletedRecord {
            req: r as u64,
            requester: req.requester,
            url: req.url.clone(),
            repr_id: req.repr_seg.map(|x| x.0),
            seg_no: req.repr_seg.map(|x| x.1),
            cache,
            result: if failed { None } else { req.result },
            bytes: if failed { 0 } else { req.size },
            issued_ms: req.issued_ms,
            controller_ms: req.controller_ms,
            connect_attempts: req.attempts,
            failed,
        };
        self.log.record(now, self.ordinal, COMPLETED, &rec);
        match req.requester {
            Requester::Client => self.client_next(),
            Requester::Prefetcher => {
                let outcome = match (failed, req.result) {
                    (true, _) => FetchOutcome::Failed,
                    (false, Some(res)) => FetchOutcome::from_serve(Ok(res)),
                    (false, None) => FetchOutcome::Failed,
                };
                let p = self.prefetcher.as_mut().expect("prefetcher request");
                p.queue.finish(outcome);
                self.pump_prefetcher()?;
                let p = self.prefetcher.as_ref().expect("prefetcher request");
                if p.queue.is_idle() {
                    let rec = PrefetchIdleRecord { stats: p.queue.stats() };
                    self.log.record(now, self.ordinal, PREFETCH_IDLE, &rec);
                }
                Ok(())
            }
        }
    }

    fn pump_prefetcher(&mut self) -> Result<(), SimError> {
        loop {
            let Some(p) = self.prefetcher.as_mut() else { return Ok(()) };
            let Some(fetch) = p.queue.start_next() else { return Ok(()) };
            let url = fetch.command.uri.clone();
            self.issue_request(Requester::Prefetcher, url, Some(fetch))?;
        }
    }

    /// Schedules the client's next request: the manifest is followed by every
    /// layer of every segment, paced to playback after the startup burst.
    fn client_next(&mut self) -> Result<(), SimError> {
        let now = self.now();
        let per_segment = self.sc.chain.len();
        let total = per_segment * self.sc.manifest.segment_count();
        let cursor = self.client.cursor;
        if cursor >= total {
            return Ok(());
        }
        self.client.cursor += 1;
        let seg_no = (cursor / per_segment) as u32 + 1;
        let layer = self.sc.chain[cursor % per_segment];
        let cfg = &self.sc.config.client;
        let first = *self.client.first_segment_ms.get_or_insert(now + cfg.startup_delay_ms);
        let earliest = if cursor.is_multiple_of(per_segment) {
            first + (seg_no.saturating_sub(1 + cfg.startup_segments)) as f64 * self.client.segment_ms
        } else {
            now
        };
        let url = self.sc.manifest.segment_url(layer, seg_no).expect("segment in range").to_string();
        self.issue_request_at(earliest.max(now), Requester::Client, url, None)?;
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutput, SimError> {
        let now = self.now();
        let labels = self.labels.clone();
        for l in &labels {
            let c = &self.caches[&l.cache];
            let rec = CacheTotalsRecord { cache: l.cache, label: l.label.clone(), counters: c.counters(), stored_objects: c.len() };
            self.log.record(now, self.ordinal, CACHE_TOTALS, &rec);
        }
        let refused = self.proxy.as_ref().map(|p| p.accept.refused()).unwrap_or(0);
        self.log.record(now, self.ordinal, RUN_END, &RunEndRecord { events: self.events, refused_connections: refused });
        let metrics = RunMetrics::from_log(&self.log)?;
        let access_logs = labels
            .iter()
            .map(|l| {
                let mut buf = Vec::new();
                self.caches[&l.cache].write_access_log(&mut buf).expect("writing to memory");
                (l.label.clone(), String::from_utf8(buf).expect("log is utf-8"))
            })
            .collect();
        Ok(RunOutput { run: self.run, seed: self.seed, log: self.log, metrics, access_logs })
    }
}

/// Replays the registry bootstrap, filling in the instance type and the
/// instance reference. Returns the last instance created.
fn bootstrap(svc: &mut IcnService, cfg: &ScenarioConfig, icn_type: &str) -> Result<InstanceId, SimError> {
    let mut last: Option<u32> = None;
    for b in &cfg.bootstrap {
        let path = b.path.trim_matches('/');
        let mut params = b.params.clone();
        if path == PATH_ICN {
            params.entry("type".into()).or_insert_with(|| icn_type.to_string());
        } else if !params.contains_key("instance") && !params.contains_key("icn") {
            if let Some(i) = last {
                params.insert("instance".into(), i.to_string());
            }
        }
        let resp = svc.handle_management_request(Method::Post, path, &params);
        if !resp.is_success() {
            return Err(SimError::Bootstrap { path: path.to_string(), status: resp.status, body: resp.body.to_string() });
        }
        if path == PATH_ICN {
            last = resp.body["id"].as_u64().map(|v| v as u32);
        }
    }
    last.map(InstanceId).ok_or_else(|| SimError::Bootstrap { path: PATH_ICN.into(), status: 400, body: "no instance created".into() })
}
