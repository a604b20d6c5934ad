use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use levyrank::cli::{ExperimentConfig, Manifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_levyrank"));
    c.env_remove("LEVYRANK_THREADS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

const SMALL: &str = r#"{
  "model": {
    "particles": 3,
    "drift": 0.0,
    "variances": [1.5, 1.0, 0.5],
    "jumps": [
      { "rate": 0.5, "rank": 1, "law": { "kind": "constant", "value": 1.0 } },
      { "rate": 0.5, "rank": 2, "law": { "kind": "exponential", "rate": 1.0 } }
    ]
  },
  "sim": { "horizon": 20.0, "step": 0.01, "seed": 5, "replications": 4, "record_stride": 5 },
  "analysis": { "bins": 20, "scan": { "radii": [50.0, 1000.0], "directions": 20, "mc_samples": 4096 } }
}"#;

#[test]
fn check_exit_codes() {
    let capital = configs().join("capital_a.json");
    let out = run(&["check", "--config", capital.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("verdict:                   stable"), "{text}");

    let sym = configs().join("symmetric3.json");
    assert_eq!(run(&["check", "--config", sym.to_str().unwrap()]).status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "{ \"model\": { \"particles\": 3,\n \"drift\": 0.0, \"colour\": 1 } }");
    let out = run(&["check", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("colour") && err.contains("line 2"), "{err}");

    let missing = tmp.path().join("nope.json");
    assert_eq!(run(&["check", "--config", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn example_configs_round_trip() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(ExperimentConfig::parse(&cfg.to_json()).unwrap(), cfg, "{}", path.display());
    }
}

#[test]
fn simulate_writes_one_csv_per_replication_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let files = dir_contents(&a);
    assert_eq!(files, dir_contents(&b));
    let names: Vec<&String> = files.keys().collect();
    assert_eq!(names.len(), 9);
    for r in 0..4 {
        assert!(files.contains_key(&format!("rep_{r:04}.csv")));
        assert!(files.contains_key(&format!("rep_{r:04}_jumps.csv")));
    }
    let manifest: Manifest = serde_json::from_slice(&files["manifest.json"]).unwrap();
    assert_eq!(manifest.seed, 5);
    assert_eq!(manifest.files.len(), 8);
    assert_eq!(manifest.version, env!("CARGO_PKG_VERSION"));

    // The seed override changes trajectories and the recorded seed.
    let c = tmp.path().join("c");
    run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "6"]);
    let other = dir_contents(&c);
    assert_ne!(other["rep_0000.csv"], files["rep_0000.csv"]);
    let m: Manifest = serde_json::from_slice(&other["manifest.json"]).unwrap();
    assert_eq!(m.seed, 6);
}

#[test]
fn jump_free_config_has_no_jump_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{ "model": { "particles": 2, "drift": [1.0, 0.0], "variances": 1.0 },
             "sim": { "horizon": 5.0, "step": 0.01, "seed": 1 } }"#,
    );
    let out = tmp.path().join("o");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let mut r = csv::Reader::from_path(out.join("rep_0000.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), vec!["t", "x1", "x2", "is_jump"]);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 501);
    assert!(rows.iter().all(|row| &row[3] == "0"));
}

#[test]
fn analyze_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("o");
    let o = out.to_str().unwrap();
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", o]).status.success());
    let res = run(&["analyze", "--config", cfg.to_str().unwrap(), "--out", o]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let occ: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("occupation.json")).unwrap()).unwrap();
    let total: f64 =
        occ["permutation_fractions"].as_array().unwrap().iter().map(|p| p["fraction"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for row in occ["rank_occupation"].as_array().unwrap() {
        let s: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    let mut curve = csv::Reader::from_path(out.join("capital_curve.csv")).unwrap();
    assert_eq!(curve.headers().unwrap().iter().collect::<Vec<_>>(), vec!["log_rank", "log_weight", "replication"]);
    let mut per_rep = BTreeMap::new();
    for row in curve.records() {
        *per_rep.entry(row.unwrap()[2].to_string()).or_insert(0) += 1;
    }
    assert_eq!(per_rep.len(), 4);
    assert!(per_rep.values().all(|&c| c == 3));

    let scan: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("lyapunov_scan.json")).unwrap()).unwrap();
    assert_eq!(scan["verdict"], serde_json::Value::Bool(true));

    let tv = std::fs::read_to_string(out.join("tv_vs_time.csv")).unwrap();
    assert_eq!(tv.lines().count(), 21);

    // simulate + analyze lists every file, and matches `run`.
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest.files.iter().map(|f| f.name.as_str()).collect();
    assert!(listed.contains(&"rep_0003.csv") && listed.contains(&"gaps.csv") && listed.contains(&"stability.json"));
    let run_dir = tmp.path().join("r");
    assert!(run(&["run", "--config", cfg.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]).status.success());
    assert_eq!(dir_contents(&out), dir_contents(&run_dir));
}

#[test]
fn analyze_without_trajectories_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = run(&["analyze", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("empty").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn thread_count_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let s = bin()
        .env("LEVYRANK_THREADS", "1")
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(s.success());
    let s = bin()
        .env("LEVYRANK_THREADS", "3")
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(s.success());
    assert_eq!(dir_contents(&a), dir_contents(&b));
    let bad = bin()
        .env("LEVYRANK_THREADS", "0")
        .args(["simulate", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(bad.code(), Some(1));
}
