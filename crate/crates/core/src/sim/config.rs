//! Scenario configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cache::Capacity;
use crate::control::Params;
use crate::dash::fixture::{self, SvcFixture};
use crate::dataplane::{Attachment, Dpid, HostKind, HostSpec, LinkSpec, TopologyConfig};
use crate::prefetch::FetchMode;
use crate::proxy::Backoff;
use crate::registry::IcnType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScenarioKind {
    Direct,
    EmptyCache,
    FullCache,
    Prefetch,
    DistributedPrefetch,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] =
        [ScenarioKind::Direct, ScenarioKind::EmptyCache, ScenarioKind::FullCache, ScenarioKind::Prefetch, ScenarioKind::DistributedPrefetch];

    /// Instance type bootstrapped for the kind; `None` runs without ICN.
    pub fn icn_type(self) -> Option<IcnType> {
        match self {
            ScenarioKind::Direct => None,
            ScenarioKind::EmptyCache | ScenarioKind::FullCache => Some(IcnType::Plain),
            ScenarioKind::Prefetch => Some(IcnType::SvcPrefetch),
            ScenarioKind::DistributedPrefetch => Some(IcnType::DistributedSvcPrefetch),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Direct => "DIRECT",
            ScenarioKind::EmptyCache => "EMPTY_CACHE",
            ScenarioKind::FullCache => "FULL_CACHE",
            ScenarioKind::Prefetch => "PREFETCH",
            ScenarioKind::DistributedPrefetch => "DISTRIBUTED_PREFETCH",
        }
    }

    /// Row label in summary tables.
    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Direct => "DIRECT",
            ScenarioKind::EmptyCache => "CACHE EMPTY",
            ScenarioKind::FullCache => "CACHE FULL",
            ScenarioKind::Prefetch => "PREFETCHER",
            ScenarioKind::DistributedPrefetch => "DISTRIBUTED",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown scenario kind `{s}`")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    /// Topology host that plays the video.
    pub host: String,
    /// Operation point requested for the whole run.
    pub representation: u32,
    /// Segments fetched back to back before pacing to playback.
    pub startup_segments: u32,
    /// Time between receiving the manifest and the first segment request.
    pub startup_delay_ms: f64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { host: "client".into(), representation: 18, startup_segments: 3, startup_delay_ms: 50.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContentConfig {
    /// Manifest on disk, relative to the scenario file; the built-in
    /// fixture is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpd_file: Option<PathBuf>,
    pub mpd_url: String,
    pub host: String,
    /// Topology host serving the content.
    pub origin: String,
    pub origin_port: u16,
}

impl Default for ContentConfig {
    fn default() -> Self {
        ContentConfig {
            mpd_file: None,
            mpd_url: fixture::MPD_URL.into(),
            host: fixture::HOST.into(),
            origin: "origin".into(),
            origin_port: 80,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    pub admission_failure_rate: f64,
    pub capacity: Capacity,
    /// Lookup time before a cache answers or goes upstream.
    pub processing_ms: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { admission_failure_rate: 0.03, capacity: Capacity::Unbounded, processing_ms: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyConfig {
    pub backoff: Backoff,
    pub accept_queue: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig { backoff: Backoff::default(), accept_queue: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// Mean proxy notification round trip.
    pub interaction_ms: f64,
    /// Uniform jitter half-width around the mean.
    pub jitter_ms: f64,
    /// Flows become active up to this long after the controller decides.
    pub install_delay_max_ms: f64,
    /// Parse and analysis time once the controller holds the manifest.
    pub mpd_analysis_ms: f64,
    /// Delivery delay of a prefetch order.
    pub order_latency_ms: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { interaction_ms: 8.0, jitter_ms: 2.0, install_delay_max_ms: 6.0, mpd_analysis_ms: 10.0, order_latency_ms: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefetchConfig {
    pub parallelism: usize,
    /// Segments per plan; the rest of the video when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lookahead: Option<u32>,
    #[serde(default)]
    pub mode: FetchMode,
}

/// One management request replayed before the run. `type` on the instance
/// path and `instance` elsewhere are filled in when missing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapRequest {
    pub path: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub kind: ScenarioKind,
    pub runs: usize,
    /// One per run; derived from `base_seed` when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base_seed: u64,
    /// Topology file relative to the scenario file, used instead of the
    /// inline topology when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology_file: Option<PathBuf>,
    #[serde(default)]
    pub topology: TopologyConfig,
    pub client: ClientConfig,
    pub content: ContentConfig,
    pub cache: CacheConfig,
    pub proxy: ProxyConfig,
    pub controller: ControllerConfig,
    pub prefetch: PrefetchConfig,
    #[serde(default)]
    pub bootstrap: Vec<BootstrapRequest>,
}

fn host(id: &str, ip: &str, dpid: &str, port: u32, kind: HostKind, latency_ms: f64, bandwidth_mbps: f64) -> HostSpec {
    HostSpec {
        id: id.into(),
        mac: None,
        ip: ip.parse().expect("static address"),
        attachment: Attachment::new(dpid, port),
        kind,
        latency_ms,
        bandwidth_mbps,
    }
}

fn bootstrap(path: &str, kv: &[(&str, &str)]) -> BootstrapRequest {
    BootstrapRequest { path: path.into(), params: kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
}

/// client, s1, s2, s3, origin in a line, with proxy, prefetcher and C1 on s1 and C2 on s2.
pub fn default_topology() -> TopologyConfig {
    let link = |a: &str, ap, b: &str, bp| LinkSpec { a: Dpid::new(a), a_port: ap, b: Dpid::new(b), b_port: bp, latency_ms: 2.0, bandwidth_mbps: 100.0 };
    TopologyConfig {
        switches: ["s1", "s2", "s3"].into_iter().map(Dpid::new).collect(),
        links: vec![link("s1", 1, "s2", 1), link("s2", 2, "s3", 1)],
        hosts: vec![
            host("client", "10.0.0.5", "s1", 10, HostKind::Client, 1.0, 100.0),
            host("proxy", "10.0.0.10", "s1", 11, HostKind::Infrastructure, 0.5, 1000.0),
            host("c1", "10.0.0.21", "s1", 12, HostKind::Infrastructure, 0.5, 1000.0),
            host("c2", "10.0.0.22", "s2", 12, HostKind::Infrastructure, 0.5, 1000.0),
            host("prefetcher", "10.0.0.30", "s1", 13, HostKind::Infrastructure, 0.5, 1000.0),
            host("origin", "10.10.0.1", "s3", 10, HostKind::Server, 20.0, 20.0),
        ],
    }
}

pub fn default_bootstrap() -> Vec<BootstrapRequest> {
    vec![
        bootstrap("onos/icn/icn", &[("name", "bbb-svc"), ("description", "SVC video delivery")]),
        bootstrap(
            "onos/icn/proxy",
            &[("name", "proxy"), ("ip", "10.0.0.10"), ("proxy_port", "8080"), ("location", "s1/11"), ("isProactive", "true")],
        ),
        bootstrap("onos/icn/cache", &[("name", "C1"), ("ip", "10.0.0.21"), ("cache_port", "3128"), ("location", "s1/12")]),
        bootstrap("onos/icn/cache", &[("name", "C2"), ("ip", "10.0.0.22"), ("cache_port", "3128"), ("location", "s2/12")]),
        bootstrap("onos/icn/prefetch", &[("name", "prefetcher"), ("ip", "10.0.0.30"), ("port", "9000"), ("location", "s1/13")]),
        bootstrap(
            "onos/icn/provider",
            &[
                ("name", "bbb"),
                ("network", "10.0.0.0/24"),
                ("uripattern", "/SVCDataset/.*"),
                ("hostpattern", "concert\\.itec\\.aau\\.at"),
            ],
        ),
    ]
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            kind: ScenarioKind::Prefetch,
            runs: 20,
            seeds: vec![],
            base_seed: 1,
            topology_file: None,
            topology: default_topology(),
            client: ClientConfig::default(),
            content: ContentConfig::default(),
            cache: CacheConfig::default(),
            proxy: ProxyConfig::default(),
            controller: ControllerConfig::default(),
            prefetch: PrefetchConfig { parallelism: 4, lookahead: None, mode: FetchMode::Full },
            bootstrap: default_bootstrap(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Reads a scenario file and resolves the files it points to relative
    /// to it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = cfg.topology_file.take() {
            let tp = dir.join(t);
            let text = std::fs::read_to_string(&tp).map_err(|source| ConfigError::Io { path: tp.clone(), source })?;
            cfg.topology = toml::from_str(&text)?;
        }
        if let Some(m) = &cfg.content.mpd_file {
            cfg.content.mpd_file = Some(dir.join(m));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.runs as u64).map(|i| self.base_seed + i).collect()
        } else {
            self.seeds.clone()
        }
    }

    /// Replaces run count and seeds together so they stay consistent.
    pub fn override_runs(&mut self, runs: usize, base_seed: Option<u64>) {
        let base = base_seed.or_else(|| self.seeds.first().copied()).unwrap_or(self.base_seed);
        self.runs = runs;
        self.base_seed = base;
        self.seeds.clear();
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.runs {
            return bad(format!("{} seeds given for {} runs", self.seeds.len(), self.runs));
        }
        if !(0.0..=1.0).contains(&self.cache.admission_failure_rate) {
            return bad(format!("admission_failure_rate {} outside [0, 1]", self.cache.admission_failure_rate));
        }
        if self.controller.jitter_ms < 0.0 || self.controller.jitter_ms > self.controller.interaction_ms {
            return bad("controller jitter must lie within [0, interaction_ms]".into());
        }
        if self.prefetch.parallelism == 0 {
            return bad("prefetch parallelism must be at least 1".into());
        }
        if self.proxy.backoff.initial_ms <= 0.0 || self.proxy.backoff.factor < 1.0 {
            return bad("backoff needs initial_ms > 0 and factor >= 1".into());
        }
        let hosts: Vec<&str> = self.topology.hosts.iter().map(|h| h.id.as_str()).collect();
        for (what, id) in [("client", &self.client.host), ("origin", &self.content.origin)] {
            if !hosts.contains(&id.as_str()) {
                return bad(format!("{what} host `{id}` is not in the topology"));
            }
        }
        if self.kind != ScenarioKind::Direct && self.bootstrap.is_empty() {
            return bad(format!("{} needs a registry bootstrap", self.kind));
        }
        if self.kind == ScenarioKind::DistributedPrefetch {
            let caches = self.bootstrap.iter().filter(|b| b.path.trim_matches('/') == crate::control::PATH_CACHE).count();
            if caches < 2 {
                return bad("DISTRIBUTED_PREFETCH needs at least two caches".into());
            }
        }
        Ok(())
    }

    /// Manifest bytes: the configured file, or the generated fixture.
    pub fn manifest_bytes(&self) -> Result<Vec<u8>, ConfigError> {
        match &self.content.mpd_file {
            Some(p) => std::fs::read(p).map_err(|source| ConfigError::Io { path: p.clone(), source }),
            None => Ok(SvcFixture::default().to_xml().into_bytes()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ScenarioConfig::default();
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds().len(), cfg.runs);
    }

    #[test]
    fn validation_catches_mistakes() {
        let mut cfg = ScenarioConfig { seeds: vec![1, 2], ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.override_runs(2, None);
        assert_eq!(cfg.seeds(), vec![1, 2]);
        cfg.validate().unwrap();
        cfg.runs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::default();
        cfg.client.host = "nobody".into();
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig { kind: ScenarioKind::DistributedPrefetch, ..Default::default() };
        cfg.bootstrap.retain(|b| !(b.path.ends_with("cache") && b.params["name"] == "C2"));
        assert!(cfg.validate().is_err());
        assert!(ScenarioConfig::from_toml("name = 1").is_err());
    }

    #[test]
    fn kinds_parse_loosely() {
        assert_eq!("full-cache".parse::<ScenarioKind>().unwrap(), ScenarioKind::FullCache);
        assert!("sometimes".parse::<ScenarioKind>().is_err());
        assert_eq!(ScenarioKind::Direct.icn_type(), None);
        assert_eq!(ScenarioKind::DistributedPrefetch.icn_type(), Some(IcnType::DistributedSvcPrefetch));
    }
}
