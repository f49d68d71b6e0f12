use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hopfdde"))
}

fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const EX1A: &str = r#"{"model.r": 30, "model.K": 1, "model.m": 1, "model.a": 1, "model.c": 4, "model.d": 0.1}"#;
const EX1B: &str = r#"{"model.r": 10, "model.K": 20, "model.m": 1, "model.a": 5, "model.c": 4, "model.d": 0.1}"#;
const ONEBRANCH: &str = r#"{"model.r": 1, "model.K": 7, "model.m": 1, "model.a": 5, "model.c": 1, "model.d": 0.1}"#;

fn run(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn thresholds_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.json", EX1A);
    let o = run("thresholds", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("1.05128205128"));
    let j = read_json(dir.path().join("out/thresholds.json"));
    assert!((j["k_0"].as_f64().unwrap() - 41.0 / 39.0).abs() < 1e-12);
    assert!((j["tau_star"].as_f64().unwrap() - 24.1).abs() < 0.05);

    let cfg = config(dir.path(), "o.json", ONEBRANCH);
    let o = run("thresholds", &cfg, &dir.path().join("out2"), &[]);
    let j = read_json(dir.path().join("out2/thresholds.json"));
    assert_eq!(o.status.code(), Some(0));
    assert!((j["k_0"].as_f64().unwrap() - 6.11).abs() < 5e-3);
}

#[test]
fn missing_field_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "bad.json", r#"{"model.r": 30, "model.K": 1, "model.m": 1, "model.a": 1, "model.d": 0.1}"#);
    let o = run("thresholds", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.c"), "{}", stderr(&o));
}

#[test]
fn hopf_catalog_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.json", EX1A);
    let out = dir.path().join("a");
    assert_eq!(run("hopf", &cfg, &out, &[]).status.code(), Some(0));
    let csv = fs::read_to_string(out.join("hopf_points.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,i,tau,w,period,delta,gamma1"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 7);
        let delta: i32 = cols[5].parse().unwrap();
        let gamma: i32 = cols[6].parse().unwrap();
        assert_eq!(delta, -gamma);
    }

    let cfg = config(dir.path(), "b.json", EX1B);
    let out = dir.path().join("b");
    assert_eq!(run("hopf", &cfg, &out, &[]).status.code(), Some(0));
    let csv = fs::read_to_string(out.join("hopf_points.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    let j = read_json(out.join("hopf_catalog.json"));
    assert_eq!(j["chi"][2].as_u64(), Some(4));
    assert!(j.get("m_max").is_some() && j.get("n_bound").is_some());
}

#[test]
fn hopf_below_k2_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "low.json",
        r#"{"model.r": 30, "model.K": 0.05, "model.m": 1, "model.a": 1, "model.c": 4, "model.d": 0.1}"#,
    );
    let o = run("hopf", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no purely imaginary"), "{}", stderr(&o));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.json", EX1A);
    for sub in ["hopf", "diagram"] {
        let (o1, o2) = (dir.path().join(format!("{sub}1")), dir.path().join(format!("{sub}2")));
        assert_eq!(run(sub, &cfg, &o1, &["--grid", "12"]).status.code(), Some(0));
        assert_eq!(run(sub, &cfg, &o2, &["--grid", "12"]).status.code(), Some(0));
        let mut names: Vec<_> = fs::read_dir(&o1).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names.into_iter().filter(|n| n.to_string_lossy().ends_with(".csv")) {
            let a = fs::read(o1.join(&name)).unwrap();
            let b = fs::read(o2.join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs");
        }
    }
}

#[test]
fn simulate_past_tau_max_reaches_prey_only_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "c.json",
        r#"{"model.r": 30, "model.K": 1, "model.m": 1, "model.a": 1, "model.c": 4, "model.d": 0.1, "analysis.tau": 36}"#,
    );
    let out = dir.path().join("out");
    let o = run("simulate", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("V_c, converged to (K,0)"));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x,y\n"));
    let j = read_json(out.join("trajectory.json"));
    assert_eq!(j["region"], "Vc");
}

#[test]
fn simulate_rejects_bad_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "c.json",
        r#"{"model.r": 30, "model.K": 1, "model.m": 1, "model.a": 1, "model.c": 4, "model.d": 0.1, "analysis.tau": 10}"#,
    );
    let o = run("simulate", &cfg, &dir.path().join("out"), &["--dt", "0.3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn diagram_summary_has_tau_star() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "s.json",
        r#"{"model.r": 30, "model.K": 1, "model.m": 1, "model.a": 1, "model.c": 4, "model.d": 0.1, "diagram.slice_tau": 26}"#,
    );
    let out = dir.path().join("out");
    assert_eq!(run("diagram", &cfg, &out, &["--grid", "10"]).status.code(), Some(0));
    let j = read_json(out.join("diagram.json"));
    assert!((j["tau_star"].as_f64().unwrap() - 24.1).abs() < 0.05);
    assert_eq!(j["k_hopf"].as_array().unwrap().len(), 10);
    let regions = fs::read_to_string(out.join("regions.csv")).unwrap();
    assert!(regions.starts_with("tau,K,label\n"));
    assert_eq!(regions.lines().count(), 101);
    let lc = fs::read_to_string(out.join("curve_transcritical.csv")).unwrap();
    assert!(lc.starts_with("tau,K,kind\n"));
    assert!(out.join("curve_hopf_n0_0.csv").exists());
}

#[test]
fn branch_writes_component_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "b.json",
        r#"{"model.r": 30, "model.K": 1, "model.m": 1, "model.a": 1, "model.c": 4, "model.d": 0.1, "branch.n": 3}"#,
    );
    let out = dir.path().join("out");
    let o = run("branch", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("branch_n3_i1.csv")).unwrap();
    assert!(csv.starts_with("tau,period,amp_x,amp_y,xmin,xmax,ymin,ymax\n"));
    let j = read_json(out.join("components.json"));
    assert_eq!(j["components"]["pairs"][0]["coincidence"], "Coincident");
}

#[test]
fn verify_passes_on_example_1a() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.json", EX1A);
    let out = dir.path().join("out");
    let o = run("verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS nesting"));
    assert!(!text.contains("FAIL"));
}
