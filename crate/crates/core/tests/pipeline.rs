use std::path::Path;

use rpl_core::cache::{cache_key, Cache};
use rpl_core::pipeline::{load_report, run_config, PipelineConfig, StageOutcome};
use rpl_core::{Error, Status};

const MINIMAL: &str = r#"
dimension = 1
stages = ["ground", "spectrum"]

[nonlinearity]
kind = "polynomial"
numerator = [-1.0]

[frequency]
omega = 1.0

[grid]
R = 30.0
h = 0.05
"#;

fn run(cfg: &PipelineConfig, out: &Path, cache: &Path) -> rpl_core::pipeline::PipelineOutcome {
    run_config(cfg, out, cache).unwrap()
}

#[test]
fn minimal_cubic_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::parse(MINIMAL).unwrap();
    let out = run(&cfg, &dir.path().join("out"), &dir.path().join("cache"));
    assert_eq!(out.exit_code(), 0);
    let r = &out.report;
    assert_eq!(r.hypotheses["H1"].status, Status::Pass);
    assert_eq!(r.hypotheses["H2"].status, Status::Pass);
    let slope = r.hypotheses["H2"].evidence["slope"].as_f64().unwrap();
    assert!((slope - 2.0).abs() < 1e-4, "{slope}");
    // the cubic soliton has no internal mode in the gap
    assert_eq!(r.modes, Some(0));
    assert_eq!(r.stages["fgr"], StageOutcome::Skipped);
    assert_eq!(r.hypotheses["H7"].status, Status::Indeterminate);
    assert!(r.hypotheses["H7"].evidence.contains_key("not_evaluated"));
    for f in ["report.json", "run_meta.json", "ground.csv"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let back = load_report(&dir.path().join("out")).unwrap();
    assert_eq!(&back, r);
}

#[test]
fn missing_extent_names_the_key() {
    let text = MINIMAL.replace("R = 30.0\n", "");
    match PipelineConfig::parse(&text) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "grid.R"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_key_rejected() {
    let text = MINIMAL.replace("h = 0.05", "h = 0.05\nspacing = 1.0");
    match PipelineConfig::parse(&text) {
        Err(Error::Config { key, message }) => {
            assert!(key.starts_with("grid"), "{key}");
            assert!(message.contains("spacing"), "{message}");
            assert!(message.contains("line"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn nonpositive_tolerance_rejected() {
    let text = format!("{MINIMAL}\n[tolerances]\ntol_gs = 0.0\n");
    match PipelineConfig::parse(&text) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "tolerances.tol_gs"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn simulate_needs_a_simulation_block() {
    let text = MINIMAL.replace(r#"["ground", "spectrum"]"#, r#"["simulate"]"#);
    match PipelineConfig::parse(&text) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "simulation"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn plan_includes_prerequisites() {
    let text = MINIMAL.replace(r#"["ground", "spectrum"]"#, r#"["fgr"]"#);
    let cfg = PipelineConfig::parse(&text).unwrap();
    let names: Vec<&str> = cfg.stage_plan().iter().map(|s| s.name()).collect();
    assert_eq!(names, ["ground", "spectrum", "resonance", "profile", "fgr"]);
}

#[test]
fn reruns_are_byte_identical_and_hit_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("omega = 1.0", "omega = 1.0\nsweep = [0.9, 1.1]");
    let cfg = PipelineConfig::parse(&text).unwrap();
    let cache = dir.path().join("cache");
    let a = run(&cfg, &dir.path().join("a"), &cache);
    let b = run(&cfg, &dir.path().join("b"), &cache);
    // the spectrum stage reuses the sweep ground states of the same run
    assert!(a.meta.cache_misses > 0);
    assert!(b.meta.cache_hits > a.meta.cache_hits);
    assert_eq!(b.meta.cache_misses, 0);
    let ra = std::fs::read(dir.path().join("a/report.json")).unwrap();
    let rb = std::fs::read(dir.path().join("b/report.json")).unwrap();
    assert_eq!(ra, rb);
    // a cold run with an empty cache reports the same numbers
    let c = run(&cfg, &dir.path().join("c"), &dir.path().join("cold"));
    assert_eq!(c.meta.cache_misses, a.meta.cache_misses);
    assert_eq!(ra, std::fs::read(dir.path().join("c/report.json")).unwrap());
}

#[test]
fn reordered_config_gives_same_keys() {
    let reordered = r#"
stages = ["spectrum", "ground"]
dimension = 1
[grid]
h = 0.05
R = 30.0
[frequency]
omega = 1.0
[nonlinearity]
numerator = [-1.0]
kind = "polynomial"
"#;
    let dir = tempfile::tempdir().unwrap();
    let a = run(&PipelineConfig::parse(MINIMAL).unwrap(), &dir.path().join("a"), &dir.path().join("ca"));
    let b = run(&PipelineConfig::parse(reordered).unwrap(), &dir.path().join("b"), &dir.path().join("cb"));
    let keys = |o: &rpl_core::pipeline::PipelineOutcome| -> Vec<String> {
        o.meta.cache_events.iter().map(|e| e.key.clone()).collect()
    };
    assert_eq!(keys(&a), keys(&b));
    assert_eq!(a.report, b.report);
}

#[test]
fn changed_frequency_changes_the_key() {
    let a = serde_json::json!({"omega": 1.0});
    let b = serde_json::json!({"omega": 1.0 + 1e-6});
    assert_ne!(cache_key(&a), cache_key(&b));
}

#[test]
fn clean_cache_empties_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::parse(MINIMAL).unwrap();
    let cache = dir.path().join("cache");
    run(&cfg, &dir.path().join("out"), &cache);
    let removed = Cache::new(&cache).clear().unwrap();
    assert!(removed >= 2);
    let again = run(&cfg, &dir.path().join("out"), &cache);
    assert_eq!(again.meta.cache_hits, 0);
    assert!(again.meta.cache_misses > 0);
}

#[test]
fn stage_error_sets_exit_code() {
    // the defocusing cubic has no ground state
    let text = MINIMAL.replace("numerator = [-1.0]", "numerator = [1.0]");
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::parse(&text).unwrap();
    let out = run(&cfg, &dir.path().join("out"), &dir.path().join("cache"));
    assert_ne!(out.exit_code(), 0);
    assert!(matches!(out.report.stages["ground"], StageOutcome::Error(_)));
    assert_eq!(out.report.stages["spectrum"], StageOutcome::Skipped);
    assert!(dir.path().join("out/report.json").exists());
}

#[test]
fn full_chain_on_saturated_case() {
    let text = r#"
dimension = 1
stages = ["fgr"]
[nonlinearity]
kind = "rational"
numerator = [0.0, -1.0]
denominator = [1.0, 0.2]
[frequency]
omega = 1.0
[grid]
R = 60.0
h = 0.1
"#;
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::parse(text).unwrap();
    let out = run(&cfg, &dir.path().join("out"), &dir.path().join("cache"));
    assert_eq!(out.exit_code(), 0, "{:?}", out.report.stages);
    let r = &out.report;
    assert_eq!(r.modes, Some(1));
    assert_eq!(r.r_min.len(), 2);
    assert!(r.r_min.iter().all(|m| m.degree == 2));
    assert_eq!(r.hypotheses["H6"].status, Status::Pass);
    assert_eq!(r.hypotheses["H7"].status, Status::Pass);
    assert_eq!(r.fgr.len(), 1);
    assert!(r.fgr[0].min_eigenvalue > 0.0);
    assert!(r.sources.iter().all(|s| s.norm > 0.0));
    assert!(dir.path().join("out/sources.csv").exists());
    assert!(dir.path().join("out/modes.csv").exists());
}
