use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(config: &str, dir: &Path, extra: &[&str]) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_bergman"))
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .env("BERGMAN_THREADS", "2")
        .output()
        .unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap()
}

fn rows(dir: &Path, table: &str) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(dir.join("out").join(format!("{table}.csv"))).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn column(dir: &Path, table: &str, name: &str) -> usize {
    let mut r = csv::Reader::from_path(dir.join("out").join(format!("{table}.csv"))).unwrap();
    r.headers().unwrap().iter().position(|h| h == name).unwrap()
}

const KERNEL: &str = r#"
experiment = "kernel_table"
[domain]
kind = "disc"
radius = 1.0
[weight]
family = "moebius_power"
beta = 1.0
[numeric]
M = 12
resolution = 64
margin = 0.5
grid_count = 8
"#;

#[test]
fn csv_output_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert!(run(KERNEL, a.path(), &[]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_bergman"))
        .args(["run", a.path().join("config.toml").to_str().unwrap(), "--out"])
        .arg(b.path().join("out"))
        .env("BERGMAN_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    let read = |d: &TempDir| fs::read(d.path().join("out/kernel_table.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(rows(a.path(), "kernel_table").len(), 64);
}

#[test]
fn seed_grid_sets_pair_count_and_quiet_silences() {
    let dir = TempDir::new().unwrap();
    let out = run(KERNEL, dir.path(), &["--seed-grid", "3", "--quiet"]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert_eq!(rows(dir.path(), "kernel_table").len(), 9);
    assert_eq!(manifest(dir.path())["passed"], Value::Bool(true));
}

#[test]
fn shrinking_discs_reach_the_closed_form() {
    let dir = TempDir::new().unwrap();
    let config = r#"
experiment = "increasing_run"
anchors = [[0.0, 0.0], [0.2, 0.1]]
[domain]
kind = "disc"
radius = 1.0
[weight]
family = "constant"
[sequence]
schedule = "harmonic"
vary = "domain"
[numeric]
M = 16
resolution = 96
n_max = 6
grid_count = 8
"#;
    let out = run(config, dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let table = rows(dir.path(), "increasing_run");
    assert_eq!(table.len(), 12);
    let (step, err) = (column(dir.path(), "increasing_run", "step"), column(dir.path(), "increasing_run", "abs_err"));
    let oracle = column(dir.path(), "increasing_run", "oracle");
    for r in table.iter().filter(|r| r[step] == *"6") {
        let (e, k): (f64, f64) = (r[err].parse().unwrap(), r[oracle].parse().unwrap());
        assert!(e <= 1e-3 * k, "{e} vs {k}");
    }
}

#[test]
fn forelli_rudin_identity_holds_on_the_unit_disc() {
    let dir = TempDir::new().unwrap();
    let config = r#"
experiment = "forelli_rudin_check"
[domain]
kind = "disc"
radius = 1.0
[weight]
family = "constant"
[numeric]
M = 12
resolution = 64
margin = 0.5
grid_count = 6
fiber_degree = 1
"#;
    assert!(run(config, dir.path(), &[]).status.success());
    let m = manifest(dir.path());
    let names: Vec<&str> = m["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"discrete_identity"));
    assert!(m["checks"].as_array().unwrap().iter().all(|c| c["passed"] == Value::Bool(true)));
}

#[test]
fn identity_sequence_has_zero_distance() {
    let dir = TempDir::new().unwrap();
    let config = r#"
experiment = "thm15_check"
anchors = [[0.6, 0.1]]
[domain]
kind = "annulus"
inner = 0.3
outer = 1.0
[weight]
family = "constant"
[sequence]
schedule = "identity"
vary = "weight"
[numeric]
M = 8
resolution = 48
n_max = 3
"#;
    assert!(run(config, dir.path(), &[]).status.success());
    let d = column(dir.path(), "thm15_check", "distance");
    for r in rows(dir.path(), "thm15_check") {
        let v: f64 = r[d].parse().unwrap();
        assert!(v <= 1e-12, "{v}");
    }
}

#[test]
fn invalid_degree_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let out = run(&KERNEL.replace("M = 12", "M = 0"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("M"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn failed_invariant_exits_with_one_and_keeps_manifest() {
    let dir = TempDir::new().unwrap();
    // Near the boundary a degree-4 truncation is far from the closed form.
    let config = KERNEL.replace("M = 12", "M = 4").replace("margin = 0.5", "margin = 0.05")
        + "[output]\nformats = [\"csv\"]\n";
    let out = run(&config, dir.path(), &["--quiet"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("[FAIL] oracle_agreement"));
    assert_eq!(manifest(dir.path())["passed"], Value::Bool(false));
}

#[test]
fn example_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        bergman_cli::parse_config(&fs::read_to_string(&path).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert_eq!(n, 7);
}
