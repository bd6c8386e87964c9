use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const QMC: &str = r#"
mode = "qmc"
seed = 5
recipes = ["binder", "local-hist"]

[lattice]
sizes = [1, 2]

[disorder]
instances = 2

[grid]
betas = [2.0]
gammas = [1.5, 2.0]

[qmc]
trotter = 8
sweeps = 256
"#;

const DEVICE: &str = r#"
mode = "device-sim"
seed = 3
recipes = ["device-binder", "device-susceptibility"]

[lattice]
sizes = [1]

[disorder]
instances = 1

[grid]
s_stars = [0.4, 0.5]

[device]
n_rep = 20

[calibration]
reads_per_call = 200
rounds = 4
"#;

fn griffiths(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_griffiths")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = griffiths(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn config(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn out(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_owned()
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn qmc_pipeline_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "qmc.toml", QMC);
    for run in ["a", "b"] {
        let o = out(&tmp, run);
        ok(&["--config", &cfg, "--out", &o, "generate"]);
        ok(&["--config", &cfg, "--out", &o, "run"]);
        ok(&["--config", &cfg, "--out", &o, "analyze"]);
    }
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(read(a.join("instances/L2-001.json")), read(b.join("instances/L2-001.json")));
    let records = read(a.join("records.ndjson"));
    assert_eq!(records.lines().count(), 2 * 2 * 2);
    assert_eq!(records, read(b.join("records.ndjson")));
    assert_eq!(read(a.join("analysis/binder.csv")), read(b.join("analysis/binder.csv")));
    let meta: serde_json::Value = serde_json::from_str(&read(a.join("analysis/binder.json"))).unwrap();
    assert!(meta.to_string().contains("records_sha256"), "{meta}");
}

#[test]
fn seed_changes_the_instances() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "qmc.toml", QMC);
    let (a, b) = (out(&tmp, "a"), out(&tmp, "b"));
    ok(&["--config", &cfg, "--out", &a, "generate"]);
    ok(&["--config", &cfg, "--out", &b, "--seed", "6", "generate"]);
    assert_ne!(read(tmp.path().join("a/instances/L2-000.json")), read(tmp.path().join("b/instances/L2-000.json")));
}

#[test]
fn rerun_needs_resume_and_resume_reuses_checkpoints() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "qmc.toml", QMC);
    let o = out(&tmp, "run");
    ok(&["--config", &cfg, "--out", &o, "run"]);
    let first = read(tmp.path().join("run/records.ndjson"));

    let again = griffiths(&["--config", &cfg, "--out", &o, "run"]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--resume"));

    ok(&["--config", &cfg, "--out", &o, "--resume", "run"]);
    assert_eq!(read(tmp.path().join("run/records.ndjson")), first);
    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path().join("run/manifest.json"))).unwrap();
    let last = manifest["entries"].as_array().unwrap().last().unwrap().clone();
    assert_eq!(last["resumed"], last["cells_total"]);
    assert_eq!(last["status"], "complete");
}

#[test]
fn output_directory_is_bound_to_its_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "qmc.toml", QMC);
    let other = config(&tmp, "other.toml", &QMC.replace("seed = 5", "seed = 9"));
    let o = out(&tmp, "run");
    ok(&["--config", &cfg, "--out", &o, "generate"]);
    let r = griffiths(&["--config", &other, "--out", &o, "generate"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("config digest"));
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let o = out(&tmp, "run");
    let cases = [
        (QMC.replace("trotter = 8", "trotter = 8\ntrotr = 2"), "trotr"),
        (QMC.replace("gammas = [1.5, 2.0]", "gammas = []"), "grid.gammas"),
        (QMC.replace("sizes = [1, 2]", "sizes = [1, 99]"), "lattice.sizes[1]"),
    ];
    for (k, (text, needle)) in cases.iter().enumerate() {
        let cfg = config(&tmp, &format!("bad{k}.toml"), text);
        let r = griffiths(&["--config", &cfg, "--out", &o, "generate"]);
        assert_eq!(r.status.code(), Some(2), "{needle}");
        assert!(String::from_utf8_lossy(&r.stderr).contains(needle), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let r = griffiths(&["generate"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn analyze_rejects_unknown_and_mismatched_recipes() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "qmc.toml", QMC);
    let o = out(&tmp, "run");
    let missing = griffiths(&["--config", &cfg, "--out", &o, "analyze", "binder"]);
    assert_eq!(missing.status.code(), Some(2));
    ok(&["--config", &cfg, "--out", &o, "run"]);
    assert_eq!(griffiths(&["--config", &cfg, "--out", &o, "analyze", "nope"]).status.code(), Some(2));
    assert_eq!(griffiths(&["--config", &cfg, "--out", &o, "analyze", "device-binder"]).status.code(), Some(2));
    ok(&["--config", &cfg, "--out", &o, "analyze", "susceptibility"]);
    let csv = read(tmp.path().join("run/analysis/susceptibility.csv"));
    assert!(csv.lines().count() > 1, "{csv}");
}

#[test]
fn recipe_list_names_both_modes() {
    let listing = ok(&["analyze", "--list"]);
    for name in ["binder", "binder-collapse", "dz-trend", "device-susceptibility", "schedule-map"] {
        assert!(listing.lines().any(|l| l.split_whitespace().next() == Some(name)), "{name}");
    }
}

#[test]
fn device_pipeline_with_calibration() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "device.toml", DEVICE);
    let o = out(&tmp, "dev");
    ok(&["--config", &cfg, "--out", &o, "generate"]);
    ok(&["--config", &cfg, "--out", &o, "calibrate"]);
    let state: serde_json::Value = serde_json::from_str(&read(tmp.path().join("dev/devices/L1-000.json"))).unwrap();
    assert!(state.to_string().contains("corrections"), "{state}");
    ok(&["--config", &cfg, "--out", &o, "run"]);
    assert_eq!(read(tmp.path().join("dev/records.ndjson")).lines().count(), 2);
    ok(&["--config", &cfg, "--out", &o, "analyze"]);
    assert!(tmp.path().join("dev/analysis/device-susceptibility.csv").exists());
    let report = ok(&["--out", &o, "report"]);
    assert!(report.contains("device-sim"), "{report}");
    assert!(report.contains("calibrate"), "{report}");
}

#[test]
fn calibrate_refuses_qmc_mode() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(&tmp, "qmc.toml", QMC);
    let r = griffiths(&["--config", &cfg, "--out", &out(&tmp, "x"), "calibrate"]);
    assert_eq!(r.status.code(), Some(2));
}
