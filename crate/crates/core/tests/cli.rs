use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rcoreset(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcoreset")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rcoreset(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn clusters(dir: &Path) {
    ok(
        dir,
        &["synth", "--kind", "mixture", "--n", "1500", "--dim", "2", "--k", "3", "--seed", "4", "--outliers", "15", "--output", "x.csv"],
    );
}

#[test]
fn synth_build_solve_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    clusters(d);
    assert!(d.join("x.json").exists());
    ok(
        d,
        &[
            "build", "--data", "x.csv", "--model", "kmeans", "--k", "3", "--robust", "--z", "15", "--beta", "0.2",
            "--builder", "gsp", "--size", "40", "--radius", "1.0", "--seed", "1", "--output", "c.csv",
        ],
    );
    let prov: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("c.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["builder"], "gsp");
    assert!(prov["robust"]["z_tilde"].as_u64().unwrap() >= 15);

    let report = ok(d, &["solve", "--data", "c.csv", "--model", "kmeans", "--k", "3", "--z", "15", "--seed", "1"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["theta_star"].as_array().unwrap().len(), 6);
    assert!(report["trimmed_loss"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("g.json"), r#"{"kind": "mixture", "n": 50, "dim": 2, "k": 2, "seed": 3}"#).unwrap();
    ok(d, &["synth", "--config", "g.json", "--n", "80", "--output", "y.csv"]);
    let rows = fs::read_to_string(d.join("y.csv")).unwrap().lines().count();
    assert_eq!(rows, 81);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    clusters(d);
    let zero = rcoreset(d, &["build", "--data", "x.csv", "--model", "kmeans", "--k", "3", "--builder", "uniform", "--size", "0"]);
    assert_eq!(zero.status.code(), Some(2));
    let missing = rcoreset(d, &["solve", "--data", "absent.csv", "--model", "kmeans", "--k", "3", "--z", "1"]);
    assert_eq!(missing.status.code(), Some(2));
    let too_many = rcoreset(d, &["solve", "--data", "x.csv", "--model", "kmeans", "--k", "3", "--z", "5000"]);
    assert_eq!(too_many.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&too_many.stderr).contains("z = 5000"));
}

#[test]
fn numerical_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--kind", "logistic", "--n", "300", "--dim", "3", "--seed", "2", "--output", "l.csv"]);
    let args = ["sensitivity", "--data", "l.csv", "--model", "logistic", "--method", "qfp", "--output", "s.json"];
    let wide = rcoreset(d, &[&args[..], &["--radius", "1000"]].concat());
    assert_eq!(wide.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&wide.stderr).contains("smaller radius"));
    ok(d, &[&args[..], &["--radius", "0.05"]].concat());
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    assert!(s["S"].as_f64().unwrap() >= 1.0);
}

#[test]
fn dynamic_replays_an_oplog() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    clusters(d);
    let log = [
        r#"{"op": "insert", "point": {"id": 90001, "features": [0.5, 0.5]}}"#,
        r#"{"op": "delete", "id": 7}"#,
        r#"{"op": "changez", "dz": 2}"#,
        r#"{"op": "insert", "point": {"id": 90002, "features": [400.0, -300.0]}}"#,
    ];
    fs::write(d.join("ops.jsonl"), log.join("\n")).unwrap();
    ok(
        d,
        &[
            "dynamic", "--data", "x.csv", "--oplog", "ops.jsonl", "--model", "kmeans", "--k", "3", "--z", "15",
            "--radius", "1.0", "--bucket", "200", "--node-size", "30", "--output", "ops.csv", "--query", "q.csv",
        ],
    );
    let counters = fs::read_to_string(d.join("ops.csv")).unwrap();
    assert_eq!(counters.lines().count(), 1 + log.len());
    let q = fs::read_to_string(d.join("q.csv")).unwrap();
    assert!(q.lines().any(|l| l.starts_with("90002,")), "far insert should sit in the outlier part");
}

fn loss_ratios(run: &Path) -> Vec<String> {
    let text = fs::read_to_string(run.join("results.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "loss_ratio").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}

#[test]
fn bench_is_reproducible_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = r#"{
        "name": "small",
        "dataset": {"synth": {"kind": "mixture", "n": 3000, "dim": 2, "k": 3, "seed": 5}},
        "outliers": {"count": 30, "mode": {"mode": "clustering"}},
        "model": {"kind": "kmeans", "k": 3},
        "robust": {"beta": 0.2, "eps": 0.3, "eps0": 0.5, "so_size": 40},
        "methods": [{"name": "Uniform+", "builder": "uniform", "sizes": [300, 600]}],
        "trials": 2,
        "seed": 5,
        "dynamic": {"ops": 20, "heights": [2, 3]}
    }"#;
    fs::write(d.join("cfg.json"), cfg).unwrap();
    ok(d, &["bench", "--config", "cfg.json", "--out", "a"]);
    ok(d, &["bench", "--config", "cfg.json", "--out", "b"]);
    let (a, b) = (loss_ratios(&d.join("a")), loss_ratios(&d.join("b")));
    assert_eq!(a.len(), 2);
    assert_eq!(a, b);
    for f in ["plots/loss_ratio.svg", "plots/speedup.svg", "series/trials.csv", "series/dynamic.csv", "provenance.json"] {
        assert!(d.join("a").join(f).exists(), "missing {f}");
    }
    let bad = rcoreset(d, &["bench", "--config", "cfg.json", "--trials", "0", "--out", "c"]);
    assert_eq!(bad.status.code(), Some(2));
}
