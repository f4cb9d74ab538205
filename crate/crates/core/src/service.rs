//! Socket-backed service mode: the controller's northbound API, a
//! prefetcher endpoint and a delayed-binding proxy, over plain HTTP/1.1
//! with one thread per connection.
//!
//! Without a real switch fabric the proxy dials the steering target itself
//! instead of relying on flow rewrites; the controller still installs the
//! flows on its fabric model.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, SocketAddrV4, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::control::{
    prefetch_params, ControlAction, ControlContext, IcnService, Method, Params, ProxyRequestNotification, SteeringResponse, SteeringTarget,
    PATH_PREFETCHER_ORDER, PATH_PROXY_REQUEST,
};
use crate::net::{MacAddr, SessionKey};
use crate::prefetch::{FetchMode, FetchOutcome, PrefetchCommand, Prefetcher, PrefetcherStats, QueuedFetch, VideoSession};
use crate::proxy::{relay, Attempt, Backoff, ProxyError, ProxySession};
use crate::registry::EndpointId;

const MAX_HEAD: usize = 64 * 1024;
const IO_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Debug, PartialEq)]
pub struct HttpRequest {
    pub method: String,
    /// Path without the query string.
    pub path: String,
    pub query: Params,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    /// Request line and headers as received.
    pub raw_head: Vec<u8>,
}

impl HttpRequest {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(n, _)| n.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    /// Query parameters merged with a form or flat JSON object body.
    pub fn params(&self) -> Params {
        let mut p = self.query.clone();
        if self.body.is_empty() {
            return p;
        }
        let json = self.header("content-type").map(|c| c.contains("json")).unwrap_or(false) || self.body.first() == Some(&b'{');
        if json {
            if let Ok(Value::Object(m)) = serde_json::from_slice::<Value>(&self.body) {
                for (k, v) in m {
                    let s = match v {
                        Value::String(s) => s,
                        other => other.to_string(),
                    };
                    p.insert(k, s);
                }
            }
        } else {
            p.extend(url::form_urlencoded::parse(&self.body).into_owned());
        }
        p
    }
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

/// Reads the head up to the blank line.
fn read_head<R: BufRead>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut raw = Vec::new();
    loop {
        let n = r.read_until(b'\n', &mut raw)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed in request head"));
        }
        if raw.ends_with(b"\r\n\r\n") || raw == b"\r\n" || raw.ends_with(b"\n\n") {
            return Ok(raw);
        }
        if raw.len() > MAX_HEAD {
            return Err(invalid("request head too large"));
        }
    }
}

pub fn read_request<R: BufRead>(r: &mut R) -> io::Result<HttpRequest> {
    let raw_head = read_head(r)?;
    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut req = httparse::Request::new(&mut headers);
    req.parse(&raw_head).map_err(|e| invalid(e.to_string()))?;
    let method = req.method.ok_or_else(|| invalid("incomplete request line"))?.to_string();
    let target = req.path.ok_or_else(|| invalid("incomplete request line"))?;
    let (path, query) = match target.split_once('?') {
        Some((p, q)) => (p.to_string(), url::form_urlencoded::parse(q.as_bytes()).into_owned().collect()),
        None => (target.to_string(), Params::new()),
    };
    let headers: Vec<(String, String)> =
        req.headers.iter().map(|h| (h.name.to_string(), String::from_utf8_lossy(h.value).trim().to_string())).collect();
    let mut out = HttpRequest { method, path, query, headers, body: Vec::new(), raw_head: raw_head.clone() };
    let len: usize = match out.header("content-length") {
        Some(v) => v.parse().map_err(|_| invalid("bad content-length"))?,
        None => 0,
    };
    out.body = vec![0; len];
    r.read_exact(&mut out.body)?;
    Ok(out)
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        201 => "Created",
        202 => "Accepted",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        409 => "Conflict",
        500 => "Internal Server Error",
        502 => "Bad Gateway",
        503 => "Service Unavailable",
        504 => "Gateway Timeout",
        _ => "Status",
    }
}

pub fn write_response<W: Write>(w: &mut W, status: u16, content_type: &str, body: &[u8]) -> io::Result<()> {
    write!(
        w,
        "HTTP/1.1 {status} {}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reason(status),
        body.len()
    )?;
    w.write_all(body)?;
    w.flush()
}

fn write_json<W: Write>(w: &mut W, status: u16, body: &Value) -> io::Result<()> {
    write_response(w, status, "application/json", body.to_string().as_bytes())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

/// One-shot HTTP/1.1 request with `Connection: close`.
pub fn http_call(addr: SocketAddr, method: &str, target: &str, host: &str, body: Option<(&str, &[u8])>) -> io::Result<HttpResponse> {
    let mut s = TcpStream::connect_timeout(&addr, IO_TIMEOUT)?;
    s.set_read_timeout(Some(IO_TIMEOUT))?;
    let mut head = format!("{method} {target} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n");
    if let Some((ctype, b)) = body {
        head.push_str(&format!("Content-Type: {ctype}\r\nContent-Length: {}\r\n", b.len()));
    }
    head.push_str("\r\n");
    s.write_all(head.as_bytes())?;
    if let Some((_, b)) = body {
        s.write_all(b)?;
    }
    let mut raw = Vec::new();
    s.read_to_end(&mut raw)?;
    parse_response(&raw)
}

pub fn parse_response(raw: &[u8]) -> io::Result<HttpResponse> {
    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut resp = httparse::Response::new(&mut headers);
    let n = match resp.parse(raw).map_err(|e| invalid(e.to_string()))? {
        httparse::Status::Complete(n) => n,
        httparse::Status::Partial => return Err(invalid("truncated response head")),
    };
    let headers: Vec<(String, String)> =
        resp.headers.iter().map(|h| (h.name.to_string(), String::from_utf8_lossy(h.value).trim().to_string())).collect();
    Ok(HttpResponse { status: resp.code.unwrap_or(0), headers, body: raw[n..].to_vec() })
}

fn resolve(host: &str, port: u16) -> io::Result<SocketAddr> {
    (host, port).to_socket_addrs()?.next().ok_or_else(|| invalid(format!("cannot resolve {host}")))
}

fn v4(addr: SocketAddr) -> SocketAddrV4 {
    match addr {
        SocketAddr::V4(a) => a,
        SocketAddr::V6(a) => SocketAddrV4::new(a.ip().to_ipv4_mapped().unwrap_or(Ipv4Addr::UNSPECIFIED), a.port()),
    }
}

/// Accepts connections forever, one thread each.
fn serve_with<F>(listener: TcpListener, handler: Arc<F>) -> io::Result<()>
where
    F: Fn(TcpStream) -> io::Result<()> + Send + Sync + 'static,
{
    for conn in listener.incoming() {
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let h = handler.clone();
        thread::spawn(move || {
            if let Err(e) = h(stream) {
                log::debug!("connection ended: {e}");
            }
        });
    }
    Ok(())
}

/// Controller northbound over HTTP.
pub struct ControllerService {
    svc: Mutex<IcnService>,
    started: Instant,
}

impl ControllerService {
    pub fn new(svc: IcnService) -> Arc<Self> {
        Arc::new(ControllerService { svc: Mutex::new(svc), started: Instant::now() })
    }

    pub fn with<T>(&self, f: impl FnOnce(&mut IcnService) -> T) -> T {
        f(&mut self.svc.lock().expect("controller lock"))
    }

    fn now_ms(&self) -> f64 {
        self.started.elapsed().as_secs_f64() * 1000.0
    }

    /// Routes one request. Follow-up work from a proxy request runs on
    /// background threads after the answer is built.
    pub fn handle(self: &Arc<Self>, req: &HttpRequest) -> (u16, Value) {
        let path = req.path.trim_matches('/');
        if path == PATH_PROXY_REQUEST {
            if req.method != "POST" {
                return (405, json!({ "error": "proxyrequest takes POST" }));
            }
            let n: ProxyRequestNotification = match serde_json::from_slice(&req.body) {
                Ok(n) => n,
                Err(e) => return (400, json!({ "error": e.to_string() })),
            };
            let now = self.now_ms();
            let result = self.with(|s| s.handle_proxy_request(&n, &ControlContext { now_ms: now, flow_activation_ms: now }));
            return match result {
                Ok(outcome) => {
                    for action in outcome.actions {
                        let me = self.clone();
                        thread::spawn(move || me.run_action(action));
                    }
                    (200, serde_json::to_value(&outcome.response).expect("steering serializes"))
                }
                Err(e) if e.is_retryable() => (503, json!({ "error": e.to_string(), "retryable": true })),
                Err(e) => (500, json!({ "error": e.to_string() })),
            };
        }
        let method: Method = match req.method.parse() {
            Ok(m) => m,
            Err(m) => return (405, json!({ "error": format!("method {m} not allowed") })),
        };
        let resp = self.with(|s| s.handle_management_request(method, path, &req.params()));
        (resp.status, resp.body)
    }

    fn run_action(&self, action: ControlAction) {
        match action {
            ControlAction::FetchMpd { mpd_url, host, origin, .. } => {
                let got = http_call(SocketAddr::V4(origin), "GET", &mpd_url, &host, None);
                match got {
                    Ok(r) if r.status == 200 => {
                        if let Err(e) = self.with(|s| s.on_mpd_fetched(&mpd_url, &r.body)) {
                            log::warn!("manifest {mpd_url}: {e}");
                            self.with(|s| s.on_mpd_failed(&mpd_url));
                        }
                    }
                    other => {
                        log::warn!("manifest {mpd_url} fetch failed: {other:?}");
                        self.with(|s| s.on_mpd_failed(&mpd_url));
                    }
                }
            }
            ControlAction::SendPrefetch { prefetcher, fetch } => {
                let ep = self.with(|s| s.registry().endpoint(prefetcher).cloned());
                let Some(ep) = ep else { return };
                let body = serde_json::to_vec(&prefetch_params(&fetch.command)).expect("params serialize");
                let addr = SocketAddr::V4(ep.station().socket());
                let target = format!("/{PATH_PREFETCHER_ORDER}");
                if let Err(e) = http_call(addr, "POST", &target, &ep.ip.to_string(), Some(("application/json", &body))) {
                    log::warn!("prefetcher {} unreachable: {e}", ep.endpoint_id);
                }
            }
        }
    }

    pub fn serve(self: Arc<Self>, listener: TcpListener) -> io::Result<()> {
        let me = self;
        serve_with(
            listener,
            Arc::new(move |stream: TcpStream| {
                stream.set_read_timeout(Some(IO_TIMEOUT))?;
                let mut r = BufReader::new(stream.try_clone()?);
                let mut w = stream;
                let req = match read_request(&mut r) {
                    Ok(req) => req,
                    Err(e) => return write_json(&mut w, 400, &json!({ "error": e.to_string() })),
                };
                let (status, body) = me.handle(&req);
                write_json(&mut w, status, &body)
            }),
        )
    }
}

/// Prefetcher endpoint plus its fetch workers.
pub struct PrefetcherService {
    state: Mutex<Prefetcher>,
    work: Condvar,
    /// Where fetches are sent; the command's server when `None`.
    pub via: Option<SocketAddr>,
    /// Host header used for fetches.
    pub host: String,
    log: Mutex<VecDeque<(String, u16, u64)>>,
}

impl PrefetcherService {
    pub fn new(endpoint: EndpointId, parallelism: usize, mode: FetchMode, host: &str, via: Option<SocketAddr>) -> Arc<Self> {
        Arc::new(PrefetcherService {
            state: Mutex::new(Prefetcher::new(endpoint, parallelism, mode)),
            work: Condvar::new(),
            via,
            host: host.to_string(),
            log: Mutex::new(VecDeque::new()),
        })
    }

    pub fn stats(&self) -> PrefetcherStats {
        self.state.lock().expect("prefetcher lock").stats()
    }

    /// Completed fetches as (uri, status, bytes).
    pub fn completed(&self) -> Vec<(String, u16, u64)> {
        self.log.lock().expect("log lock").iter().cloned().collect()
    }

    pub fn is_idle(&self) -> bool {
        self.state.lock().expect("prefetcher lock").is_idle()
    }

    /// Handles an order; `false` for a duplicate.
    pub fn order(&self, params: &Params) -> Result<bool, String> {
        let uri = params.get("uri").ok_or("missing uri")?.clone();
        let server = params.get("server").ok_or("missing server")?.clone();
        let port: u16 = params.get("port").map(|p| p.parse().map_err(|_| format!("bad port {p}"))).transpose()?.unwrap_or(80);
        let m = self.state.lock().expect("prefetcher lock");
        let mut m = m;
        let target_cache = EndpointId(0);
        let fetch = QueuedFetch {
            session: VideoSession { client: Ipv4Addr::UNSPECIFIED, mpd_url: String::new() },
            command: PrefetchCommand { uri, server, port },
            target_cache,
        };
        let accepted = m.enqueue(fetch);
        drop(m);
        self.work.notify_all();
        Ok(accepted)
    }

    fn next_job(&self) -> QueuedFetch {
        let mut m = self.state.lock().expect("prefetcher lock");
        loop {
            if let Some(f) = m.start_next() {
                return f;
            }
            m = self.work.wait(m).expect("prefetcher lock");
        }
    }

    fn fetch(&self, f: &QueuedFetch) -> FetchOutcome {
        let addr = match self.via {
            Some(a) => Ok(a),
            None => resolve(&f.command.server, f.command.port),
        };
        let res = addr.and_then(|a| http_call(a, "GET", &f.command.uri, &self.host, None));
        let (status, bytes, outcome) = match res {
            Ok(r) if r.status == 200 => {
                let hit = r.headers.iter().any(|(n, v)| n.eq_ignore_ascii_case("x-cache") && v.starts_with("HIT"));
                (r.status, r.body.len() as u64, if hit { FetchOutcome::AlreadyPresent } else { FetchOutcome::Populated })
            }
            Ok(r) => (r.status, 0, FetchOutcome::Failed),
            Err(e) => {
                log::debug!("prefetch {}: {e}", f.command.uri);
                (0, 0, FetchOutcome::Failed)
            }
        };
        self.log.lock().expect("log lock").push_back((f.command.uri.clone(), status, bytes));
        outcome
    }

    /// Starts `parallelism` worker threads.
    pub fn spawn_workers(self: &Arc<Self>) {
        let n = self.state.lock().expect("prefetcher lock").parallelism;
        for _ in 0..n {
            let me = self.clone();
            thread::spawn(move || loop {
                let job = me.next_job();
                let outcome = me.fetch(&job);
                me.state.lock().expect("prefetcher lock").finish(outcome);
                me.work.notify_all();
            });
        }
    }

    pub fn serve(self: Arc<Self>, listener: TcpListener) -> io::Result<()> {
        self.spawn_workers();
        let me = self;
        serve_with(
            listener,
            Arc::new(move |stream: TcpStream| {
                stream.set_read_timeout(Some(IO_TIMEOUT))?;
                let mut r = BufReader::new(stream.try_clone()?);
                let mut w = stream;
                let req = match read_request(&mut r) {
                    Ok(req) => req,
                    Err(e) => return write_json(&mut w, 400, &json!({ "error": e.to_string() })),
                };
                if req.path.trim_matches('/') != PATH_PREFETCHER_ORDER {
                    return write_json(&mut w, 404, &json!({ "error": "no such path" }));
                }
                match me.order(&req.params()) {
                    Ok(accepted) => write_json(&mut w, 202, &json!({ "accepted": accepted })),
                    Err(e) => write_json(&mut w, 400, &json!({ "error": e })),
                }
            }),
        )
    }
}

#[derive(Clone, Debug)]
pub struct ProxyServiceConfig {
    pub controller: SocketAddr,
    /// Address the proxy is registered under; used as its upstream source.
    pub proxy_ip: Ipv4Addr,
    pub backoff: Backoff,
    /// Original destination when the client's Host names no reachable peer.
    pub original_destination: Option<SocketAddrV4>,
}

/// Delayed-binding proxy: reads the request head, asks the controller, then
/// binds and splices upstream.
pub struct ProxyService {
    pub config: ProxyServiceConfig,
}

impl ProxyService {
    pub fn new(config: ProxyServiceConfig) -> Arc<Self> {
        Arc::new(ProxyService { config })
    }

    fn original_destination(&self, host: &str) -> io::Result<SocketAddrV4> {
        if let Some(d) = self.config.original_destination {
            return Ok(d);
        }
        let (name, port) = match host.rsplit_once(':') {
            Some((n, p)) if p.parse::<u16>().is_ok() => (n, p.parse().expect("checked")),
            _ => (host, 80),
        };
        resolve(name, port).map(v4)
    }

    fn ask_controller(&self, n: &ProxyRequestNotification) -> Result<SteeringResponse, String> {
        let body = serde_json::to_vec(n).expect("notification serializes");
        let target = format!("/{PATH_PROXY_REQUEST}");
        let r = http_call(self.config.controller, "POST", &target, "controller", Some(("application/json", &body))).map_err(|e| e.to_string())?;
        if r.status != 200 {
            return Err(format!("controller answered {}: {}", r.status, String::from_utf8_lossy(&r.body)));
        }
        serde_json::from_slice(&r.body).map_err(|e| e.to_string())
    }

    /// Serves one client connection end to end.
    pub fn handle(&self, client: TcpStream) -> io::Result<()> {
        client.set_read_timeout(Some(IO_TIMEOUT))?;
        let peer = v4(client.peer_addr()?);
        let mut reader = BufReader::new(client.try_clone()?);
        let mut out = client;
        let raw = match read_head(&mut reader) {
            Ok(raw) => raw,
            Err(_) => return out.write_all(&ProxyError::MalformedHttp("unreadable head".into()).client_response()),
        };
        let host = crate::proxy::parse_request_head(&raw).map(|h| h.host).unwrap_or_default();
        let dst = match self.original_destination(&host) {
            Ok(d) => d,
            Err(_) => SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, 80),
        };
        let mut session = ProxySession::accept(SessionKey::new(peer, dst), MacAddr::from_ipv4(*peer.ip()));
        let n = match session.on_client_request(&raw) {
            Ok(n) => n,
            Err(e) => return out.write_all(&e.client_response()),
        };
        let steering = match self.ask_controller(&n) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("controller: {e}");
                session.close();
                return write_response(&mut out, 502, "text/plain", b"controller unavailable");
            }
        };
        let target = match steering.target {
            SteeringTarget::Cache { ip, port, .. } => SocketAddrV4::new(ip, port),
            SteeringTarget::DefaultGateway => steering.connect_to,
        };
        let backoff = self.config.backoff;
        session.on_steering(steering, &backoff).map_err(|e| invalid(e.to_string()))?;
        if let Some(k) = session.upstream_key(self.config.proxy_ip) {
            log::debug!("{} steered to {target}, upstream {k:?}", n.uri);
        }
        let started = Instant::now();
        let upstream = loop {
            let now = started.elapsed().as_secs_f64() * 1000.0;
            let conn = TcpStream::connect_timeout(&SocketAddr::V4(target), Duration::from_millis(500));
            let ok = conn.is_ok();
            match session.attempt(now, ok, &backoff) {
                Attempt::Connected { .. } => break conn.expect("connected"),
                Attempt::RetryAt(t) => thread::sleep(Duration::from_secs_f64((t - now).max(0.0) / 1000.0)),
                Attempt::Failed(attempts) => return out.write_all(&ProxyError::MaxRetriesExceeded { attempts }.client_response()),
            }
        };
        let mut up_w = upstream.try_clone()?;
        up_w.write_all(&raw)?;
        // any request body already buffered goes along
        let buffered = reader.buffer().to_vec();
        up_w.write_all(&buffered)?;
        let _ = up_w.shutdown(Shutdown::Write);
        let digest = relay(upstream, &mut out)?;
        log::debug!("{} relayed {} bytes", n.uri, digest.bytes);
        let _ = out.shutdown(Shutdown::Both);
        Ok(())
    }

    pub fn serve(self: Arc<Self>, listener: TcpListener) -> io::Result<()> {
        let me = self;
        serve_with(listener, Arc::new(move |s: TcpStream| me.handle(s)))
    }
}

/// Parses `ip:port` or a bare port on all interfaces.
pub fn listen_addr(s: &str) -> Result<SocketAddr, String> {
    if let Ok(port) = s.parse::<u16>() {
        return Ok(SocketAddr::new(IpAddr::V4(Ipv4Addr::UNSPECIFIED), port));
    }
    s.parse().map_err(|_| format!("bad listen address `{s}`"))
}
