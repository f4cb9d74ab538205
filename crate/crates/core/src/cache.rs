//! Simulated HTTP cache node: LRU store, hit/miss accounting and a seeded
//! admission model standing in for a real cache refusing to store objects.

use std::fmt;
use std::io::{self, Write};
use std::num::NonZeroUsize;

use lru::LruCache;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::registry::EndpointId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Unbounded,
    Objects(usize),
    Bytes(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServeOutcome {
    Hit,
    MissFilled,
    SwapfailMiss,
    MissUnfilled,
}

impl ServeOutcome {
    pub fn is_hit(self) -> bool {
        self == ServeOutcome::Hit
    }

    pub fn log_tag(self) -> &'static str {
        match self {
            ServeOutcome::Hit => "TCP_HIT",
            ServeOutcome::MissFilled => "TCP_MISS",
            ServeOutcome::SwapfailMiss => "TCP_SWAPFAIL_MISS",
            ServeOutcome::MissUnfilled => "TCP_MISS_ABORTED",
        }
    }
}

impl fmt::Display for ServeOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.log_tag())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CacheError {
    #[error("origin unreachable for {0}")]
    OriginUnreachable(String),
    #[error("admission failure rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("no miss in flight for {0}")]
    NoPendingMiss(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
    pub swapfail_misses: u64,
    /// Misses whose origin fetch failed; not part of the served total.
    pub unfilled: u64,
}

impl CacheCounters {
    pub fn served(&self) -> u64 {
        self.hits + self.misses + self.swapfail_misses
    }

    /// All non-hit outcomes, as a cache log would count them.
    pub fn all_misses(&self) -> u64 {
        self.misses + self.swapfail_misses
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccessLogEntry {
    pub time_ms: f64,
    pub url: String,
    pub result: ServeOutcome,
    pub bytes: u64,
}

/// Result of the first half of a request: the store lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Hit { size: u64 },
    Miss,
}

pub struct CacheState {
    pub cache_id: EndpointId,
    capacity: Capacity,
    store: LruCache<String, u64>,
    stored_bytes: u64,
    counters: CacheCounters,
    admission_failure_rate: f64,
    rng: ChaCha8Rng,
    log: Vec<AccessLogEntry>,
}

impl fmt::Debug for CacheState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CacheState")
            .field("cache_id", &self.cache_id)
            .field("capacity", &self.capacity)
            .field("objects", &self.store.len())
            .field("stored_bytes", &self.stored_bytes)
            .field("counters", &self.counters)
            .finish()
    }
}

impl CacheState {
    pub fn new(cache_id: EndpointId, capacity: Capacity, admission_failure_rate: f64, rng_seed: u64) -> Result<Self, CacheError> {
        if !(0.0..=1.0).contains(&admission_failure_rate) {
            return Err(CacheError::InvalidRate(admission_failure_rate));
        }
        let store = match capacity {
            Capacity::Objects(n) => LruCache::new(NonZeroUsize::new(n.max(1)).expect("nonzero")),
            _ => LruCache::unbounded(),
        };
        Ok(CacheState {
            cache_id,
            capacity,
            store,
            stored_bytes: 0,
            counters: CacheCounters::default(),
            admission_failure_rate,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            log: Vec::new(),
        })
    }

    pub fn counters(&self) -> CacheCounters {
        self.counters
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn stored_bytes(&self) -> u64 {
        self.stored_bytes
    }

    /// Presence check that neither counts nor touches recency.
    pub fn contains(&self, url: &str) -> bool {
        self.store.contains(url)
    }

    pub fn access_log(&self) -> &[AccessLogEntry] {
        &self.log
    }

    /// First half of a request. A hit is counted and logged here; a miss is
    /// counted once the origin fetch resolves through [`complete_miss`] or
    /// [`abort_miss`].
    ///
    /// [`complete_miss`]: CacheState::complete_miss
    /// [`abort_miss`]: CacheState::abort_miss
    pub fn lookup(&mut self, now_ms: f64, url: &str) -> Lookup {
        match self.store.get(url).copied() {
            Some(size) => {
                self.counters.hits += 1;
                self.log.push(AccessLogEntry { time_ms: now_ms, url: url.to_string(), result: ServeOutcome::Hit, bytes: size });
                Lookup::Hit { size }
            }
            None => Lookup::Miss,
        }
    }

    /// The origin returned `size` bytes for a missed `url`; roll admission.
    pub fn complete_miss(&mut self, now_ms: f64, url: &str, size: u64) -> ServeOutcome {
        let result = if self.admit() {
            self.insert(url, size);
            self.counters.misses += 1;
            ServeOutcome::MissFilled
        } else {
            self.counters.swapfail_misses += 1;
            ServeOutcome::SwapfailMiss
        };
        self.log.push(AccessLogEntry { time_ms: now_ms, url: url.to_string(), result, bytes: size });
        result
    }

    pub fn abort_miss(&mut self, now_ms: f64, url: &str) -> CacheError {
        self.counters.unfilled += 1;
        self.log.push(AccessLogEntry { time_ms: now_ms, url: url.to_string(), result: ServeOutcome::MissUnfilled, bytes: 0 });
        CacheError::OriginUnreachable(url.to_string())
    }

    /// Lookup and origin fetch collapsed into one step.
    pub fn serve(&mut self, now_ms: f64, url: &str, object_size: u64, origin_available: bool) -> Result<ServeOutcome, CacheError> {
        match self.lookup(now_ms, url) {
            Lookup::Hit { .. } => Ok(ServeOutcome::Hit),
            Lookup::Miss if origin_available => Ok(self.complete_miss(now_ms, url, object_size)),
            Lookup::Miss => Err(self.abort_miss(now_ms, url)),
        }
    }

    /// Empties the store, the counters and the access log.
    pub fn reset(&mut self) {
        self.store.clear();
        self.stored_bytes = 0;
        self.counters = CacheCounters::default();
        self.log.clear();
    }

    /// Preloads objects through the admission model without counting them as
    /// requests. Returns how many were stored.
    pub fn warm<'a>(&mut self, objects: impl IntoIterator<Item = (&'a str, u64)>) -> usize {
        let mut stored = 0;
        for (url, size) in objects {
            if self.admit() {
                self.insert(url, size);
                stored += 1;
            }
        }
        stored
    }

    fn admit(&mut self) -> bool {
        // draw even at the boundaries so the stream does not depend on the rate
        let roll: f64 = self.rng.random();
        roll >= self.admission_failure_rate
    }

    fn insert(&mut self, url: &str, size: u64) {
        if let Capacity::Bytes(limit) = self.capacity {
            if size > limit {
                return;
            }
        }
        if let Some((_, old)) = self.store.push(url.to_string(), size) {
            self.stored_bytes -= old;
        }
        self.stored_bytes += size;
        if let Capacity::Bytes(limit) = self.capacity {
            while self.stored_bytes > limit {
                let (_, evicted) = self.store.pop_lru().expect("over limit implies non-empty");
                self.stored_bytes -= evicted;
            }
        }
    }

    pub fn write_access_log<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.log {
            writeln!(w, "{:.3} {} {} {} GET {}", e.time_ms / 1000.0, self.cache_id, e.result, e.bytes, e.url)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cache(rate: f64) -> CacheState {
        CacheState::new(EndpointId(1), Capacity::Unbounded, rate, 7).unwrap()
    }

    #[test]
    fn second_request_hits() {
        let mut c = cache(0.0);
        assert_eq!(c.serve(0.0, "/a", 10, true), Ok(ServeOutcome::MissFilled));
        assert_eq!(c.serve(1.0, "/a", 10, true), Ok(ServeOutcome::Hit));
        assert_eq!(c.counters(), CacheCounters { hits: 1, misses: 1, swapfail_misses: 0, unfilled: 0 });
    }

    #[test]
    fn full_refusal_never_hits() {
        let mut c = cache(1.0);
        for _ in 0..20 {
            assert_eq!(c.serve(0.0, "/a", 10, true), Ok(ServeOutcome::SwapfailMiss));
        }
        assert_eq!(c.counters().hits, 0);
        assert_eq!(c.warm([("/b", 1)]), 0);
    }

    #[test]
    fn origin_down_is_unfilled() {
        let mut c = cache(0.0);
        assert!(matches!(c.serve(0.0, "/a", 10, false), Err(CacheError::OriginUnreachable(_))));
        assert_eq!(c.counters().served(), 0);
        assert_eq!(c.counters().unfilled, 1);
        assert_eq!(c.access_log()[0].result, ServeOutcome::MissUnfilled);
    }

    #[test]
    fn reset_then_miss_and_warm_then_hit() {
        let mut c = cache(0.0);
        c.warm([("/a", 1), ("/b", 2)]);
        c.reset();
        assert_eq!(c.serve(0.0, "/a", 1, true), Ok(ServeOutcome::MissFilled));
        c.reset();
        let urls: Vec<String> = (0..100).map(|i| format!("/o{i}")).collect();
        assert_eq!(c.warm(urls.iter().map(|u| (u.as_str(), 5))), 100);
        for u in &urls {
            assert_eq!(c.serve(0.0, u, 5, true), Ok(ServeOutcome::Hit));
        }
    }

    #[test]
    fn rejects_bad_rate() {
        assert_eq!(CacheState::new(EndpointId(1), Capacity::Unbounded, 1.5, 0).unwrap_err(), CacheError::InvalidRate(1.5));
    }

    #[test]
    fn object_capacity_evicts_least_recent() {
        let mut c = CacheState::new(EndpointId(1), Capacity::Objects(2), 0.0, 0).unwrap();
        c.serve(0.0, "/a", 1, true).unwrap();
        c.serve(0.0, "/b", 1, true).unwrap();
        c.serve(0.0, "/a", 1, true).unwrap();
        c.serve(0.0, "/c", 1, true).unwrap();
        assert!(c.contains("/a") && c.contains("/c") && !c.contains("/b"));
    }

    #[test]
    fn byte_capacity_evicts_until_within_limit() {
        let mut c = CacheState::new(EndpointId(1), Capacity::Bytes(10), 0.0, 0).unwrap();
        c.serve(0.0, "/a", 4, true).unwrap();
        c.serve(0.0, "/b", 4, true).unwrap();
        c.serve(0.0, "/c", 6, true).unwrap();
        assert!(!c.contains("/a") && c.contains("/b") && c.contains("/c"));
        assert_eq!(c.stored_bytes(), 10);
        c.serve(0.0, "/huge", 11, true).unwrap();
        assert!(!c.contains("/huge"));
        assert_eq!(c.stored_bytes(), 10);
    }

    #[test]
    fn access_log_lines() {
        let mut c = cache(0.0);
        c.serve(1500.0, "/a", 3, true).unwrap();
        c.serve(2000.0, "/a", 3, true).unwrap();
        let mut buf = Vec::new();
        c.write_access_log(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1.500 ep-1 TCP_MISS 3 GET /a\n2.000 ep-1 TCP_HIT 3 GET /a\n");
    }
}
