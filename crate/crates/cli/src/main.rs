//! `icnaas`: run simulated scenarios, lint configs, re-emit reports from
//! saved event logs, and serve the control plane over HTTP.

use std::fs;
use std::io::BufReader;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, TcpListener};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use icnaas::prefetch::FetchMode;
use icnaas::proxy::Backoff;
use icnaas::registry::EndpointId;
use icnaas::service::{listen_addr, ControllerService, PrefetcherService, ProxyService, ProxyServiceConfig};
use icnaas::sim::report::{summary, write_csv};
use icnaas::sim::{bootstrapped_service, EventLog, RunMetrics, Scenario, ScenarioConfig, ScenarioKind, ScenarioReport};

const CSV_NAME: &str = "results.csv";
const SUMMARY_NAME: &str = "summary.txt";
const EVENTS_DIR: &str = "events";
const ACCESS_DIR: &str = "access";

#[derive(Parser)]
#[command(name = "icnaas", version, about = "URL-steered in-network caching: simulator and control service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and write CSV, summary and event logs.
    Run(RunArgs),
    /// Check a scenario config without running it.
    Validate {
        config: PathBuf,
    },
    /// Recompute CSV and summary from the event logs of a previous run.
    Report {
        dir: PathBuf,
        /// Write results there instead of printing the summary only.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the controller northbound API with the config's bootstrap applied.
    Controller {
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8181")]
        listen: String,
    },
    /// Serve a prefetcher order endpoint.
    Prefetcher(PrefetcherArgs),
    /// Serve a delayed-binding proxy.
    Proxy(ProxyArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    outdir: PathBuf,
    /// First seed; runs use consecutive seeds from here.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Scenario kind, or `all` for every kind.
    #[arg(long)]
    scenario: Option<String>,
    /// Representation the client plays.
    #[arg(long)]
    representation: Option<u32>,
    /// Keep record lines only in the event logs.
    #[arg(long)]
    records_only: bool,
}

#[derive(Args)]
struct PrefetcherArgs {
    #[arg(long, default_value = "127.0.0.1:9000")]
    listen: String,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Host header for fetches.
    #[arg(long, default_value = icnaas::dash::fixture::HOST)]
    host: String,
    /// Send every fetch here instead of the ordered server.
    #[arg(long)]
    via: Option<SocketAddr>,
    /// Registry id of this prefetcher.
    #[arg(long, default_value_t = 0)]
    endpoint_id: u32,
}

#[derive(Args)]
struct ProxyArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, default_value = "127.0.0.1:8181")]
    controller: SocketAddr,
    /// Address the proxy is registered under.
    #[arg(long)]
    proxy_ip: Ipv4Addr,
    /// Original destination to report for every client.
    #[arg(long)]
    original_dst: Option<SocketAddrV4>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Validate { config } => validate(&config),
        Command::Report { dir, out } => report(&dir, out.as_deref()),
        Command::Controller { config, listen } => serve_controller(&config, &listen),
        Command::Prefetcher(a) => serve_prefetcher(a),
        Command::Proxy(a) => serve_proxy(a),
    }
}

fn kinds(base: ScenarioKind, arg: Option<&str>) -> Result<Vec<ScenarioKind>> {
    match arg {
        None => Ok(vec![base]),
        Some(s) if s.eq_ignore_ascii_case("all") => Ok(ScenarioKind::ALL.to_vec()),
        Some(s) => s.split(',').map(|k| k.parse().map_err(|_| anyhow::anyhow!("unknown scenario kind `{k}`"))).collect(),
    }
}

fn kind_dir(kind: ScenarioKind) -> String {
    kind.as_str().to_ascii_lowercase()
}

fn log_name(run: usize) -> String {
    format!("run-{:02}.log", run + 1)
}

fn run(a: RunArgs) -> Result<()> {
    let base = ScenarioConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    let mut reports = Vec::new();
    for kind in kinds(base.kind, a.scenario.as_deref())? {
        let mut cfg = base.clone();
        cfg.kind = kind;
        if a.runs.is_some() || a.seed.is_some() {
            cfg.override_runs(a.runs.unwrap_or(cfg.runs), a.seed);
        }
        if let Some(r) = a.representation {
            cfg.client.representation = r;
        }
        let mut scenario = Scenario::new(cfg).with_context(|| format!("setting up {kind}"))?;
        if a.records_only {
            scenario = scenario.records_only();
        }
        let started = std::time::Instant::now();
        let runs = scenario.run_all().with_context(|| format!("running {kind}"))?;
        log::info!("{kind}: {} runs in {:.2?}", runs.len(), started.elapsed());
        let dir = a.outdir.join(kind_dir(kind));
        fs::create_dir_all(dir.join(EVENTS_DIR))?;
        fs::create_dir_all(dir.join(ACCESS_DIR))?;
        for r in &runs {
            r.log.write_to(std::io::BufWriter::new(fs::File::create(dir.join(EVENTS_DIR).join(log_name(r.run)))?))?;
            for (label, text) in &r.access_logs {
                fs::write(dir.join(ACCESS_DIR).join(format!("{label}-{}", log_name(r.run))), text)?;
            }
        }
        let out = scenario.output(runs);
        write_csv(&out.report, fs::File::create(dir.join(CSV_NAME))?)?;
        reports.push(out.report);
    }
    let text = summary(&reports);
    fs::write(a.outdir.join(SUMMARY_NAME), &text)?;
    print!("{text}");
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let cfg = ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    let scenario = Scenario::new(cfg.clone())?;
    println!(
        "{}: ok ({}, {} runs, representation {} -> layers {:?}, {} requests per run)",
        path.display(),
        cfg.kind,
        cfg.runs,
        cfg.client.representation,
        scenario.chain(),
        scenario.requests_per_run()
    );
    Ok(())
}

/// Reads every `<kind>/events/*.log` under `dir`.
fn load_reports(dir: &Path) -> Result<Vec<ScenarioReport>> {
    let mut reports = Vec::new();
    let mut kind_dirs: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(EVENTS_DIR).is_dir()).collect();
    kind_dirs.sort();
    for kd in kind_dirs {
        let mut logs: Vec<PathBuf> = fs::read_dir(kd.join(EVENTS_DIR))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "log"))
            .collect();
        logs.sort();
        let mut runs = Vec::new();
        for p in &logs {
            let log = EventLog::read_from(BufReader::new(fs::File::open(p)?)).with_context(|| format!("reading {}", p.display()))?;
            runs.push(RunMetrics::from_log(&log).with_context(|| format!("metrics from {}", p.display()))?);
        }
        let Some(first) = runs.first() else { continue };
        reports.push(ScenarioReport { scenario: first.scenario.clone(), kind: first.kind, runs });
    }
    reports.sort_by_key(|r| ScenarioKind::ALL.iter().position(|k| *k == r.kind));
    if reports.is_empty() {
        bail!("no event logs under {}", dir.display());
    }
    Ok(reports)
}

fn report(dir: &Path, out: Option<&Path>) -> Result<()> {
    let reports = load_reports(dir)?;
    let text = summary(&reports);
    if let Some(out) = out {
        for r in &reports {
            let d = out.join(kind_dir(r.kind));
            fs::create_dir_all(&d)?;
            write_csv(r, fs::File::create(d.join(CSV_NAME))?)?;
        }
        fs::write(out.join(SUMMARY_NAME), &text)?;
    }
    print!("{text}");
    Ok(())
}

fn bind(addr: &str) -> Result<TcpListener> {
    let addr = listen_addr(addr).map_err(anyhow::Error::msg)?;
    let l = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    log::info!("listening on {}", l.local_addr()?);
    Ok(l)
}

fn serve_controller(config: &Path, listen: &str) -> Result<()> {
    let cfg = ScenarioConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    let (svc, instance) = bootstrapped_service(&cfg)?;
    if let Some(i) = instance {
        log::info!("instance {} ready", i.0);
    }
    ControllerService::new(svc).serve(bind(listen)?)?;
    Ok(())
}

fn serve_prefetcher(a: PrefetcherArgs) -> Result<()> {
    if a.parallelism == 0 {
        bail!("parallelism must be at least 1");
    }
    let svc = PrefetcherService::new(EndpointId(a.endpoint_id), a.parallelism, FetchMode::Full, &a.host, a.via);
    svc.serve(bind(&a.listen)?)?;
    Ok(())
}

fn serve_proxy(a: ProxyArgs) -> Result<()> {
    let svc = ProxyService::new(ProxyServiceConfig {
        controller: a.controller,
        proxy_ip: a.proxy_ip,
        backoff: Backoff::default(),
        original_destination: a.original_dst,
    });
    svc.serve(bind(&a.listen)?)?;
    Ok(())
}
