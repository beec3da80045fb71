use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn tempres(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempres"))
        .args(args)
        .current_dir(dir)
        .env_remove("TEMPRES_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) {
    let out = tempres(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Rows after the header, split into cells.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn simulated() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--out", "run"], dir.path());
    dir
}

#[test]
fn fisher_report_defaults() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["fisher", "--out", "f"], dir.path());
    let text = read(dir.path().join("f/fisher_report.csv"));
    assert_eq!(
        text.lines().next().unwrap(),
        "tau,gamma,fi_s,fi_a,fi_total,qfi,fi_int_s,fi_int_a,fi_int_incoh,crb_per_event"
    );
    let rows = rows(&text);
    assert_eq!(rows.len(), 35);
    for r in &rows {
        assert!((num(&r[4]) - 0.25).abs() < 1e-6, "{r:?}");
    }
    let origin = rows.iter().find(|r| r[0] == "0" && r[1] == "0").unwrap();
    assert!(num(&origin[2]).abs() < 1e-12);
    let rayleigh = rows.iter().find(|r| r[0] == "0.1" && r[1] == "0.5").unwrap();
    assert!(num(&rayleigh[8]) < 0.0025);
    assert!(dir.path().join("f/fisher.manifest.json").exists());
}

#[test]
fn simulate_is_reproducible_and_seedable() {
    let dir = simulated();
    let first = read(dir.path().join("run/records.csv"));
    assert_eq!(first.lines().next().unwrap(), "tau_true,gamma,run,channel,n,counts");
    assert_eq!(first.lines().count(), 1 + 28_000);

    ok(&["simulate", "--out", "again"], dir.path());
    assert_eq!(first, read(dir.path().join("again/records.csv")));

    ok(&["simulate", "--seed", "5", "--out", "seeded"], dir.path());
    assert_ne!(first, read(dir.path().join("seeded/records.csv")));
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("seeded/simulate.manifest.json"))).unwrap();
    assert_eq!(manifest["master_seed"], 5);
    assert_eq!(manifest["config"]["seed"], 5);
    let digest = manifest["outputs"][0]["sha256"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
}

#[test]
fn manifest_config_reproduces_outputs() {
    let dir = simulated();
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("run/simulate.manifest.json"))).unwrap();
    std::fs::write(dir.path().join("echo.json"), manifest["config"].to_string()).unwrap();
    ok(&["simulate", "--config", "echo.json", "--out", "replay"], dir.path());
    assert_eq!(read(dir.path().join("run/records.csv")), read(dir.path().join("replay/records.csv")));
}

#[test]
fn estimate_from_records() {
    let dir = simulated();
    ok(&["estimate", "run/records.csv", "--out", "est"], dir.path());
    let estimates = read(dir.path().join("est/estimates.csv"));
    assert_eq!(estimates.lines().next().unwrap(), "tau_true,gamma,run,tau_hat");
    assert_eq!(estimates.lines().count(), 1 + 3500);
    assert!(rows(&estimates).iter().all(|r| num(&r[3]) >= 0.0));

    let stats = read(dir.path().join("est/stats.csv"));
    assert_eq!(
        stats.lines().next().unwrap(),
        "tau_true,gamma,n_runs,mean,variance,bias,variance_per_detection"
    );
    let stats = rows(&stats);
    assert_eq!(stats.len(), 35);
    for r in stats.iter().filter(|r| r[1] == "0" && r[0] != "0") {
        let v = num(&r[6]);
        assert!((3.2..=8.0).contains(&v), "{r:?}");
    }
    // the constraint folds the estimates at zero separation upward
    for r in stats.iter().filter(|r| r[0] == "0") {
        assert!(num(&r[3]) > 0.0);
    }
}

#[test]
fn estimate_rejects_mismatched_records() {
    let dir = simulated();
    std::fs::write(dir.path().join("other.json"), r#"{"tau_grid": [0, 0.25, 0.5, 0.75, 1.0]}"#).unwrap();
    let out = tempres(&["estimate", "run/records.csv", "--config", "other.json", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(4));

    std::fs::write(dir.path().join("broken.csv"), "tau_true,gamma,run,channel,n,counts\n0.1,0,0,s,0,12\n").unwrap();
    let out = tempres(&["estimate", "broken.csv", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(4));

    let out = tempres(&["estimate", "missing.csv", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\n  \"repetitions\": 10,\n  \"gammas\": [0, 0.9]\n}\n").unwrap();
    let out = tempres(&["fisher", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("gammas"), "{err}");

    std::fs::write(dir.path().join("typo.json"), "{\n  \"seeed\": 1\n}\n").unwrap();
    let out = tempres(&["simulate", "--config", "typo.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let out = tempres(&["reproduce", "fig9"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_tempres"))
        .args(["fisher"])
        .current_dir(dir.path())
        .env("TEMPRES_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("file"), "x").unwrap();
    let out = tempres(&["simulate", "--out", "file/sub"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

fn figure(dir: &Path, id: &str) -> Vec<Vec<String>> {
    ok(&["reproduce", id, "--svg", "--out", "figs"], dir);
    let svg = read(dir.join(format!("figs/{id}.svg")));
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let csv = read(dir.join(format!("figs/{id}.csv")));
    assert_eq!(csv.lines().next().unwrap(), "series,tau,value,err");
    rows(&csv)
}

fn series_names(rows: &[Vec<String>]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in rows {
        if !names.contains(&r[0]) {
            names.push(r[0].clone());
        }
    }
    names
}

#[test]
fn figure_three_series() {
    let dir = tempfile::tempdir().unwrap();
    let rows = figure(dir.path(), "fig3");
    assert_eq!(
        series_names(&rows),
        [
            "gamma=0",
            "gamma=0.125",
            "gamma=0.25",
            "gamma=0.375",
            "gamma=0.5",
            "quantum_crb",
            "intensity_crb"
        ]
    );
}

#[test]
fn figure_four_resource_counting() {
    let dir = tempfile::tempdir().unwrap();
    let rows = figure(dir.path(), "fig4");
    let bound = rows.iter().find(|r| r[0] == "quantum_crb").map(|r| num(&r[2])).unwrap();
    let smallest = rows
        .iter()
        .filter(|r| r[0] == "per_a_detection" && num(&r[1]) > 0.0)
        .min_by(|a, b| num(&a[1]).total_cmp(&num(&b[1])))
        .unwrap();
    assert!(num(&smallest[2]) < bound);
}

#[test]
fn figure_two_tracks_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let rows = figure(dir.path(), "fig2");
    let incoherent: Vec<_> = rows.iter().filter(|r| r[0] == "gamma=0.5" && num(&r[1]) >= 0.2).collect();
    assert_eq!(incoherent.len(), 5);
    for r in incoherent {
        let (tau, mean, err) = (num(&r[1]), num(&r[2]), num(&r[3]));
        assert!((mean - tau).abs() <= err, "{r:?}");
    }
}
