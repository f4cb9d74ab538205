//! Discrete-event simulator: engine, link model, scenario runner, metrics
//! and reports.

pub mod config;
pub mod engine;
pub mod eventlog;
pub mod metrics;
pub mod network;
pub mod report;
pub mod scenario;

pub use config::{ConfigError, ScenarioConfig, ScenarioKind};
pub use engine::EventQueue;
pub use eventlog::{EventLine, EventLog, LogError};
pub use metrics::{RunMetrics, ScenarioReport, Stats};
pub use network::{simulate_transfers, Network};
pub use scenario::{bootstrapped_service, run_scenario, RunOutput, Scenario, ScenarioOutput, SimError};
