use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
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

[output]
dir = "out"
"#;

fn rpl(args: &[&str], cache: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rpl"));
    cmd.args(args).env_remove("RPL_CACHE_DIR");
    if let Some(c) = cache {
        cmd.env("RPL_CACHE_DIR", c);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_report_and_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("case.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let cfg = cfg.to_str().unwrap();

    let first = rpl(&["run", cfg], None);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("H1  pass"), "{}", stdout(&first));
    let out = dir.path().join("out");
    let report = std::fs::read(out.join("report.json")).unwrap();
    // default cache location sits inside the output directory
    assert!(out.join("cache").is_dir());

    let second = rpl(&["run", cfg], None);
    assert!(second.status.success());
    assert!(stdout(&second).contains("0 misses"), "{}", stdout(&second));
    assert_eq!(report, std::fs::read(out.join("report.json")).unwrap());

    let shown = rpl(&["report", out.to_str().unwrap()], None);
    assert!(shown.status.success());
    assert!(stdout(&shown).contains("internal modes: 0"), "{}", stdout(&shown));

    let cleaned = rpl(&["clean-cache", out.join("cache").to_str().unwrap()], None);
    assert!(cleaned.status.success());
    assert!(!stdout(&cleaned).contains("removed 0"), "{}", stdout(&cleaned));
    let third = rpl(&["run", cfg], None);
    assert!(stdout(&third).contains(" 0 hits"), "{}", stdout(&third));
}

#[test]
fn env_var_overrides_cache_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("case.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let store = dir.path().join("elsewhere");
    let o = rpl(&["run", cfg.to_str().unwrap()], Some(&store));
    assert!(o.status.success());
    assert!(store.join("ground").is_dir());
    assert!(!dir.path().join("out/cache").exists());
}

#[test]
fn config_error_names_key_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("case.toml");
    std::fs::write(&cfg, CONFIG.replace("R = 30.0\n", "")).unwrap();
    let o = rpl(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.R"));
}

#[test]
fn stage_error_exits_one_and_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("case.toml");
    std::fs::write(&cfg, CONFIG.replace("[-1.0]", "[1.0]")).unwrap();
    let o = rpl(&["run", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(report["stages"]["ground"]["error"].is_string(), "{report}");
}

#[test]
fn missing_report_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = rpl(&["report", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}
