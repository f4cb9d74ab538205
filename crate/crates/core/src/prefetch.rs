//! Prefetch planning: which segment URLs to fetch ahead of a client, which
//! cache each one belongs to, and the prefetcher's work queue.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::net::Ipv4Addr;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cache::ServeOutcome;
use crate::dash::{MpdError, MpdManifest};
use crate::registry::{EndpointId, InstanceId};

/// Contiguous layer ranges over the representation rank space `[0, R)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationMap {
    pub instance_id: InstanceId,
    /// Nearest cache first.
    pub boundaries: Vec<(EndpointId, Range<u32>)>,
    pub repr_to_cache: BTreeMap<u32, EndpointId>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrefetchError {
    #[error("layer allocation needs at least one cache")]
    NoCaches,
    #[error("layer allocation needs at least one representation")]
    NoRepresentations,
    #[error(transparent)]
    Manifest(#[from] MpdError),
}

/// Splits `[0, r)` into `caches.len()` contiguous ranges whose sizes differ by
/// at most one, larger ranges first, nearest cache taking the lowest range.
pub fn allocate_layers(instance_id: InstanceId, r: u32, caches: &[EndpointId]) -> Result<AllocationMap, PrefetchError> {
    allocate_ids(instance_id, &(0..r).collect::<Vec<_>>(), caches)
}

/// As [`allocate_layers`], with ranks taken over the manifest's representation
/// ids in ascending order.
pub fn allocate_for_manifest(instance_id: InstanceId, manifest: &MpdManifest, caches: &[EndpointId]) -> Result<AllocationMap, PrefetchError> {
    allocate_ids(instance_id, &manifest.repr_ids(), caches)
}

fn allocate_ids(instance_id: InstanceId, ids: &[u32], caches: &[EndpointId]) -> Result<AllocationMap, PrefetchError> {
    if caches.is_empty() {
        return Err(PrefetchError::NoCaches);
    }
    if ids.is_empty() {
        return Err(PrefetchError::NoRepresentations);
    }
    let r = ids.len() as u32;
    let n = caches.len() as u32;
    let mut boundaries = Vec::with_capacity(caches.len());
    let mut repr_to_cache = BTreeMap::new();
    let mut lo = 0;
    for (i, cache) in caches.iter().enumerate() {
        let size = r / n + u32::from((i as u32) < r % n);
        let range = lo..lo + size;
        for rank in range.clone() {
            repr_to_cache.insert(ids[rank as usize], *cache);
        }
        boundaries.push((*cache, range));
        lo += size;
    }
    Ok(AllocationMap { instance_id, boundaries, repr_to_cache })
}

impl AllocationMap {
    pub fn cache_for(&self, repr_id: u32) -> Option<EndpointId> {
        self.repr_to_cache.get(&repr_id).copied()
    }

    /// Representation ids held by `cache`, ascending.
    pub fn layers_of(&self, cache: EndpointId) -> BTreeSet<u32> {
        self.repr_to_cache.iter().filter(|(_, c)| **c == cache).map(|(r, _)| *r).collect()
    }
}

/// Wire form of a prefetch order sent to a prefetcher.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefetchCommand {
    pub uri: String,
    pub server: String,
    pub port: u16,
}

/// One video playback: a client address watching one manifest.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VideoSession {
    pub client: Ipv4Addr,
    pub mpd_url: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedFetch {
    pub command: PrefetchCommand,
    pub repr_id: u32,
    pub seg_no: u32,
    pub target_cache: EndpointId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefetchPlan {
    pub session: VideoSession,
    pub commands: Vec<PlannedFetch>,
    pub issued_at_ms: f64,
}

/// (session, uri) pairs already planned; a plan never repeats one.
#[derive(Clone, Debug, Default)]
pub struct PlanLedger {
    planned: HashMap<VideoSession, HashSet<String>>,
}

impl PlanLedger {
    pub fn len(&self) -> usize {
        self.planned.values().map(HashSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.planned.values().all(HashSet::is_empty)
    }

    pub fn forget_session(&mut self, session: &VideoSession) {
        self.planned.remove(session);
    }
}

/// Where plan commands point.
#[derive(Clone, Copy, Debug)]
pub enum Placement<'a> {
    Single(EndpointId),
    Distributed(&'a AllocationMap),
}

pub struct PlanRequest<'a> {
    pub manifest: &'a MpdManifest,
    pub session: &'a VideoSession,
    pub repr_id: u32,
    pub seg_no: u32,
    /// Segment count starting at `seg_no`; `None` runs to the end of the video.
    pub lookahead: Option<u32>,
    pub placement: Placement<'a>,
    pub server: &'a str,
    pub port: u16,
    pub now_ms: f64,
}

/// Plans fetches for `chain(repr_id)` over `[seg_no, seg_no + lookahead)`,
/// segment by segment with layers ascending, skipping anything the ledger
/// already holds for this session.
pub fn plan_prefetch(req: &PlanRequest<'_>, ledger: &mut PlanLedger) -> Result<PrefetchPlan, PrefetchError> {
    let chain = req.manifest.resolve_chain(req.repr_id)?;
    let count = req.manifest.segment_count() as u32;
    let first = req.seg_no.max(1);
    let end = match req.lookahead {
        Some(n) => first.saturating_add(n).min(count + 1),
        None => count + 1,
    };
    let mut commands = Vec::new();
    let planned = ledger.planned.entry(req.session.clone()).or_default();
    for seg_no in first..end {
        for &repr_id in &chain {
            let uri = req.manifest.segment_url(repr_id, seg_no).expect("segment within count");
            let target_cache = match req.placement {
                Placement::Single(c) => c,
                Placement::Distributed(map) => match map.cache_for(repr_id) {
                    Some(c) => c,
                    None => continue,
                },
            };
            if planned.contains(uri) {
                continue;
            }
            let uri = uri.to_string();
            planned.insert(uri.clone());
            commands.push(PlannedFetch {
                command: PrefetchCommand { uri, server: req.server.to_string(), port: req.port },
                repr_id,
                seg_no,
                target_cache,
            });
        }
    }
    Ok(PrefetchPlan { session: req.session.clone(), commands, issued_at_ms: req.now_ms })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchOutcome {
    Populated,
    AlreadyPresent,
    Failed,
}

impl FetchOutcome {
    /// Maps what the cache did with the prefetcher's request.
    pub fn from_serve(outcome: Result<ServeOutcome, crate::cache::CacheError>) -> Self {
        match outcome {
            Ok(ServeOutcome::Hit) => FetchOutcome::AlreadyPresent,
            Ok(ServeOutcome::MissFilled) => FetchOutcome::Populated,
            Ok(ServeOutcome::SwapfailMiss) | Ok(ServeOutcome::MissUnfilled) | Err(_) => FetchOutcome::Failed,
        }
    }
}

/// How much of each object the prefetcher downloads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchMode {
    #[default]
    Full,
    /// Experimental: stop after the first bytes and rely on the cache
    /// finishing the download on its own.
    Partial { first_bytes: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueuedFetch {
    pub session: VideoSession,
    pub command: PrefetchCommand,
    pub target_cache: EndpointId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetcherStats {
    pub accepted: u64,
    pub suppressed: u64,
    pub populated: u64,
    pub already_present: u64,
    pub failed: u64,
}

/// FIFO of fetch orders with at-most-once delivery per (session, uri) and a
/// bounded number of fetches in flight.
#[derive(Clone, Debug)]
pub struct Prefetcher {
    pub endpoint: EndpointId,
    pub parallelism: usize,
    pub mode: FetchMode,
    queue: VecDeque<QueuedFetch>,
    seen: HashSet<(VideoSession, String)>,
    in_flight: usize,
    stats: PrefetcherStats,
}

impl Prefetcher {
    pub fn new(endpoint: EndpointId, parallelism: usize, mode: FetchMode) -> Self {
        Prefetcher {
            endpoint,
            parallelism: parallelism.max(1),
            mode,
            queue: VecDeque::new(),
            seen: HashSet::new(),
            in_flight: 0,
            stats: PrefetcherStats::default(),
        }
    }

    /// Returns false when the order is a duplicate for its session.
    pub fn enqueue(&mut self, fetch: QueuedFetch) -> bool {
        if !self.seen.insert((fetch.session.clone(), fetch.command.uri.clone())) {
            self.stats.suppressed += 1;
            return false;
        }
        self.stats.accepted += 1;
        self.queue.push_back(fetch);
        true
    }

    /// Next order to start, if a fetch slot is free.
    pub fn start_next(&mut self) -> Option<QueuedFetch> {
        if self.in_flight >= self.parallelism {
            return None;
        }
        let next = self.queue.pop_front()?;
        self.in_flight += 1;
        Some(next)
    }

    pub fn finish(&mut self, outcome: FetchOutcome) {
        self.in_flight = self.in_flight.saturating_sub(1);
        match outcome {
            FetchOutcome::Populated => self.stats.populated += 1,
            FetchOutcome::AlreadyPresent => self.stats.already_present += 1,
            FetchOutcome::Failed => self.stats.failed += 1,
        }
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight == 0 && self.queue.is_empty()
    }

    pub fn stats(&self) -> PrefetcherStats {
        self.stats
    }

    /// Bytes the prefetcher pulls for an object of `size`.
    pub fn fetch_bytes(&self, size: u64) -> u64 {
        match self.mode {
            FetchMode::Full => size,
            FetchMode::Partial { first_bytes } => size.min(first_bytes),
        }
    }
}
