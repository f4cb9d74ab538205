//! Delayed-binding proxy: accept a redirected connection, read the request
//! head, ask the controller where to go, then connect (with exponential
//! backoff while flows come up) and relay bytes untouched.

use std::collections::VecDeque;
use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, SocketAddrV4};

use serde::{Deserialize, Serialize};

use crate::control::{ProxyRequestNotification, SteeringResponse};
use crate::net::{MacAddr, SessionKey, IPPROTO_TCP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProxyState {
    Accepted,
    UrlRead,
    Notified,
    Steered,
    Spliced,
    Closed,
}

impl fmt::Display for ProxyState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProxyError {
    #[error("malformed HTTP request: {0}")]
    MalformedHttp(String),
    #[error("session is {from}, cannot move to {to}")]
    InvalidTransition { from: ProxyState, to: ProxyState },
    #[error("upstream connect failed after {attempts} attempts")]
    MaxRetriesExceeded { attempts: u32 },
    #[error("accept queue full ({0} pending)")]
    QueueFull(usize),
}

impl ProxyError {
    /// Status line sent to the client before closing.
    pub fn client_status(&self) -> (u16, &'static str) {
        match self {
            ProxyError::MalformedHttp(_) => (400, "Bad Request"),
            ProxyError::MaxRetriesExceeded { .. } => (504, "Gateway Timeout"),
            ProxyError::QueueFull(_) => (503, "Service Unavailable"),
            ProxyError::InvalidTransition { .. } => (500, "Internal Server Error"),
        }
    }

    pub fn client_response(&self) -> Vec<u8> {
        let (code, reason) = self.client_status();
        format!("HTTP/1.1 {code} {reason}\r\nConnection: close\r\nContent-Length: 0\r\n\r\n").into_bytes()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestHead {
    pub method: String,
    pub path: String,
    pub host: String,
}

/// Parses a request line and headers. An absolute-form target supplies both
/// host and path; otherwise the Host header is required.
pub fn parse_request_head(raw: &[u8]) -> Result<RequestHead, ProxyError> {
    let mut headers = [httparse::EMPTY_HEADER; 64];
    let mut req = httparse::Request::new(&mut headers);
    match req.parse(raw) {
        Ok(_) => {}
        Err(e) => return Err(ProxyError::MalformedHttp(e.to_string())),
    }
    let method = req.method.ok_or_else(|| ProxyError::MalformedHttp("incomplete request line".into()))?;
    let target = req.path.ok_or_else(|| ProxyError::MalformedHttp("incomplete request line".into()))?;
    let header_host = req
        .headers
        .iter()
        .find(|h| h.name.eq_ignore_ascii_case("host"))
        .map(|h| String::from_utf8_lossy(h.value).trim().to_string())
        .filter(|h| !h.is_empty());
    let lower = target.to_ascii_lowercase();
    let (host, path) = if lower.starts_with("http://") || lower.starts_with("https://") {
        let rest = &target[target.find("://").expect("scheme") + 3..];
        let (authority, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/"),
        };
        if authority.is_empty() {
            return Err(ProxyError::MalformedHttp("empty authority".into()));
        }
        (authority.to_string(), path.to_string())
    } else {
        let host = header_host.ok_or_else(|| ProxyError::MalformedHttp("missing Host header".into()))?;
        if !target.starts_with('/') {
            return Err(ProxyError::MalformedHttp(format!("unsupported request target `{target}`")));
        }
        (host, target.to_string())
    };
    Ok(RequestHead { method: method.to_string(), path, host })
}

/// Exponential retry schedule for upstream connects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Backoff {
    pub initial_ms: f64,
    pub factor: f64,
    pub max_retries: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { initial_ms: 10.0, factor: 2.0, max_retries: 5 }
    }
}

impl Backoff {
    /// Wait before retry number `retry` (0-based).
    pub fn delay_ms(&self, retry: u32) -> f64 {
        self.initial_ms * self.factor.powi(retry as i32)
    }

    /// Sum of every wait when all retries are used.
    pub fn total_wait_ms(&self) -> f64 {
        (0..self.max_retries).map(|r| self.delay_ms(r)).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Attempt {
    Connected { attempts: u32 },
    RetryAt(f64),
    Failed(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxySession {
    /// Client five-tuple with the destination the client believes it reached.
    pub session_key: SessionKey,
    pub client_mac: MacAddr,
    pub state: ProxyState,
    pub request: Option<RequestHead>,
    pub steering: Option<SteeringResponse>,
    pub retry_count: u32,
    pub backoff_ms: f64,
    pub attempts: u32,
}

impl ProxySession {
    pub fn accept(session_key: SessionKey, client_mac: MacAddr) -> Self {
        ProxySession {
            session_key,
            client_mac,
            state: ProxyState::Accepted,
            request: None,
            steering: None,
            retry_count: 0,
            backoff_ms: 0.0,
            attempts: 0,
        }
    }

    fn advance(&mut self, from: ProxyState, to: ProxyState) -> Result<(), ProxyError> {
        if self.state != from {
            return Err(ProxyError::InvalidTransition { from: self.state, to });
        }
        self.state = to;
        Ok(())
    }

    /// Reads the request head and builds the controller notification. A
    /// malformed head closes the session.
    pub fn on_client_request(&mut self, raw_head: &[u8]) -> Result<ProxyRequestNotification, ProxyError> {
        if self.state != ProxyState::Accepted {
            return Err(ProxyError::InvalidTransition { from: self.state, to: ProxyState::UrlRead });
        }
        let head = match parse_request_head(raw_head) {
            Ok(h) => h,
            Err(e) => {
                self.state = ProxyState::Closed;
                return Err(e);
            }
        };
        self.advance(ProxyState::Accepted, ProxyState::UrlRead)?;
        let k = self.session_key;
        let notification = ProxyRequestNotification {
            uri: head.path.clone(),
            hostname: head.host.clone(),
            smac: self.client_mac,
            source_ip: k.src_ip,
            destination_ip: k.dst_ip,
            protocol: IPPROTO_TCP,
            source_port: k.src_port,
            destination_port: k.dst_port,
        };
        self.request = Some(head);
        self.advance(ProxyState::UrlRead, ProxyState::Notified)?;
        Ok(notification)
    }

    pub fn on_steering(&mut self, steering: SteeringResponse, backoff: &Backoff) -> Result<SocketAddrV4, ProxyError> {
        self.advance(ProxyState::Notified, ProxyState::Steered)?;
        let addr = steering.connect_to;
        self.steering = Some(steering);
        self.backoff_ms = backoff.initial_ms;
        Ok(addr)
    }

    /// One connect attempt at `now_ms`; `accepted` says whether the path
    /// toward the target is up.
    pub fn attempt(&mut self, now_ms: f64, accepted: bool, backoff: &Backoff) -> Attempt {
        if self.state != ProxyState::Steered {
            return Attempt::Failed(self.attempts);
        }
        self.attempts += 1;
        if accepted {
            self.state = ProxyState::Spliced;
            return Attempt::Connected { attempts: self.attempts };
        }
        if self.retry_count >= backoff.max_retries {
            self.state = ProxyState::Closed;
            return Attempt::Failed(self.attempts);
        }
        let wait = backoff.delay_ms(self.retry_count);
        self.retry_count += 1;
        self.backoff_ms = wait * backoff.factor;
        Attempt::RetryAt(now_ms + wait)
    }

    pub fn close(&mut self) {
        self.state = ProxyState::Closed;
    }

    /// Connection target the proxy dials, as seen from its own socket.
    pub fn upstream_key(&self, proxy_ip: Ipv4Addr) -> Option<SessionKey> {
        let s = self.steering.as_ref()?;
        Some(SessionKey::new(SocketAddrV4::new(proxy_ip, self.session_key.src_port), s.connect_to))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConnectReport {
    pub attempts: u32,
    pub connected_at_ms: f64,
}

/// Runs the attempt loop to completion against a predicate telling whether
/// the path is up at a given time.
pub fn connect_with_backoff(
    session: &mut ProxySession,
    start_ms: f64,
    backoff: &Backoff,
    mut path_up: impl FnMut(f64) -> bool,
) -> Result<ConnectReport, ProxyError> {
    let mut now = start_ms;
    loop {
        match session.attempt(now, path_up(now), backoff) {
            Attempt::Connected { attempts } => return Ok(ConnectReport { attempts, connected_at_ms: now }),
            Attempt::RetryAt(t) => now = t,
            Attempt::Failed(attempts) => return Err(ProxyError::MaxRetriesExceeded { attempts }),
        }
    }
}

/// Bounded queue of connections awaiting the proxy.
#[derive(Clone, Debug)]
pub struct AcceptQueue<T> {
    capacity: usize,
    pending: VecDeque<T>,
    refused: u64,
}

impl<T> AcceptQueue<T> {
    pub const DEFAULT_CAPACITY: usize = 128;

    pub fn new(capacity: usize) -> Self {
        AcceptQueue { capacity, pending: VecDeque::new(), refused: 0 }
    }

    pub fn offer(&mut self, item: T) -> Result<(), ProxyError> {
        if self.pending.len() >= self.capacity {
            self.refused += 1;
            return Err(ProxyError::QueueFull(self.pending.len()));
        }
        self.pending.push_back(item);
        Ok(())
    }

    pub fn take(&mut self) -> Option<T> {
        self.pending.pop_front()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn refused(&self) -> u64 {
        self.refused
    }
}

impl<T> Default for AcceptQueue<T> {
    fn default() -> Self {
        Self::new(Self::DEFAULT_CAPACITY)
    }
}

/// FNV-1a over a byte stream, used to compare what went in with what came out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamDigest {
    pub bytes: u64,
    pub hash: u64,
}

impl Default for StreamDigest {
    fn default() -> Self {
        StreamDigest { bytes: 0, hash: 0xcbf2_9ce4_8422_2325 }
    }
}

impl StreamDigest {
    pub fn update(&mut self, data: &[u8]) {
        for b in data {
            self.hash ^= *b as u64;
            self.hash = self.hash.wrapping_mul(0x0100_0000_01b3);
        }
        self.bytes += data.len() as u64;
    }

    pub fn of(data: &[u8]) -> Self {
        let mut d = Self::default();
        d.update(data);
        d
    }
}

/// Copies one direction of a spliced connection, digesting what passes.
pub fn relay<R: Read, W: Write>(mut from: R, mut to: W) -> io::Result<StreamDigest> {
    let mut digest = StreamDigest::default();
    let mut buf = [0u8; 16 * 1024];
    loop {
        let n = match from.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        to.write_all(&buf[..n])?;
        digest.update(&buf[..n]);
    }
    to.flush()?;
    Ok(digest)
}
