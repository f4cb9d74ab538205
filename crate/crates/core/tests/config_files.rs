//! Checked-in scenario and manifest files match what the code generates.

use std::path::PathBuf;

use icnaas::dash::fixture::SvcFixture;
use icnaas::sim::report::csv_string;
use icnaas::sim::{run_scenario, ScenarioConfig};

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn default_scenario_file_is_the_built_in_default() {
    let cfg = ScenarioConfig::load(&repo("scenarios/default.toml")).unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
}

#[test]
fn manifest_fixture_is_the_generator_output() {
    let on_disk = std::fs::read_to_string(repo("crates/core/fixtures/BBB-I-1080p.mpd")).unwrap();
    assert_eq!(on_disk, SvcFixture::default().to_xml());
}

#[test]
fn manifest_file_and_generator_give_the_same_runs() {
    let mut generated = ScenarioConfig::default();
    generated.override_runs(1, None);
    let mut from_file = generated.clone();
    from_file.content.mpd_file = Some(repo("crates/core/fixtures/BBB-I-1080p.mpd"));
    let a = run_scenario(&generated).unwrap();
    let b = run_scenario(&from_file).unwrap();
    assert_eq!(csv_string(&a.report), csv_string(&b.report));
}

#[test]
fn referenced_files_resolve_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("nets");
    std::fs::create_dir(&sub).unwrap();
    let base = ScenarioConfig::default();
    std::fs::write(sub.join("topo.toml"), toml::to_string(&base.topology).unwrap()).unwrap();
    std::fs::write(dir.path().join("video.mpd"), SvcFixture::default().to_xml()).unwrap();
    let mut cfg = base.clone();
    cfg.topology = Default::default();
    cfg.topology_file = Some("nets/topo.toml".into());
    cfg.content.mpd_file = Some("video.mpd".into());
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();

    let loaded = ScenarioConfig::load(&path).unwrap();
    assert_eq!(loaded.topology, base.topology);
    assert_eq!(loaded.content.mpd_file.as_deref(), Some(dir.path().join("video.mpd").as_path()));
    assert_eq!(loaded.manifest_bytes().unwrap(), SvcFixture::default().to_xml().into_bytes());

    std::fs::write(&path, cfg.to_toml().replace("nets/topo.toml", "nets/missing.toml")).unwrap();
    assert!(ScenarioConfig::load(&path).is_err());
}
