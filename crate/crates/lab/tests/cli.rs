use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sofic-lab")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_e8(min_pair_stat: f64) -> String {
    format!(
        r#"{{"schema_version":1,"seed":3,"experiment":{{"id":"E8","sizes":[2,4],"window":["e","a"],"epsilons":[0.1],
        "pair_epsilon":0.2,"vertex_pairs":64,"cluster_threshold":0.05,"min_pair_stat":{min_pair_stat},"barycentre_tolerance":1e-9}}}}"#
    )
}

#[test]
fn e1_default_config_passes_and_reaches_log_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(&["run", path(&configs().join("e1.json")), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("e1_entropy.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config_sha256="));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let norm = header.iter().position(|&h| h == "normalized").unwrap();
    let fair_last = lines.filter(|l| l.starts_with("0.5/0.5,")).last().unwrap();
    // The window column is quoted only when it has commas; `{e}` has none.
    let value: f64 = fair_last.split(',').nth(norm).unwrap().parse().unwrap();
    assert!((value - 2f64.ln()).abs() < 0.03);
}

#[test]
fn over_budget_exhaustive_run_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(&["run", path(&configs().join("e1_over_budget.json")), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["error"], "budget");
    assert_eq!(diag["budget"], "1048576");
    assert!(diag["message"].as_str().unwrap().contains("budget"));
}

#[test]
fn budget_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = lab(&["run", path(&configs().join("e5.json")), "--budget", "1000", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(diag["error"], "budget");
    assert_eq!(diag["budget"], "1000");
}

#[test]
fn threshold_failure_exits_2_and_report_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("strict.json");
    std::fs::write(&config, small_e8(1.5)).unwrap();
    let dir = tmp.path().join("out");
    let out = lab(&["run", path(&config), "--out", path(&dir)]);
    assert_eq!(out.status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], false);
    let rep = lab(&["report", path(&dir)]);
    assert_eq!(rep.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("FAIL min pair-vertex statistic"));
}

#[test]
fn plots_only_with_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("e8.json");
    std::fs::write(&config, small_e8(0.9)).unwrap();
    let (plain, plotted) = (tmp.path().join("plain"), tmp.path().join("plotted"));
    assert_eq!(lab(&["run", path(&config), "--out", path(&plain)]).status.code(), Some(0));
    assert_eq!(lab(&["run", path(&config), "--out", path(&plotted), "--plot"]).status.code(), Some(0));
    assert!(!plain.join("e8_dispersion.svg").exists());
    let svg = std::fs::read_to_string(plotted.join("e8_dispersion.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    // Plots never change the tables.
    for name in ["e8_defects.csv", "e8_dispersion.csv", "summary.json"] {
        assert_eq!(std::fs::read(plain.join(name)).unwrap(), std::fs::read(plotted.join(name)).unwrap());
    }
}

#[test]
fn seed_override_changes_checksum_only_through_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = configs().join("e7.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    lab(&["run", path(&config), "--out", path(&a)]);
    lab(&["run", path(&config), "--seed", "12345", "--out", path(&b)]);
    let first = |d: &Path| std::fs::read_to_string(d.join("e7_expansion.csv")).unwrap().lines().next().unwrap().to_string();
    assert_ne!(first(&a), first(&b));
}

#[test]
fn validate_accepts_shipped_configs_and_rejects_bad_ones() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        let out = lab(&["validate", path(&p)]);
        assert_eq!(out.status.code(), Some(0), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
    }
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown_field.json", small_e8(0.9).replacen("\"seed\":3", "\"seed\":3,\"colour\":1", 1)),
        ("bad_version.json", small_e8(0.9).replacen("\"schema_version\":1", "\"schema_version\":7", 1)),
        ("no_seed.json", small_e8(0.9).replacen("\"seed\":3,", "", 1)),
        ("empty_sizes.json", small_e8(0.9).replacen("[2,4]", "[]", 1)),
    ];
    for (name, text) in cases {
        let p = tmp.path().join(name);
        std::fs::write(&p, text).unwrap();
        let out = lab(&["validate", path(&p)]);
        assert_eq!(out.status.code(), Some(1), "{name}");
        let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
        assert!(diag["message"].is_string(), "{name}");
    }
}

#[test]
fn shipped_schema_is_valid_json_and_names_every_experiment() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/experiment-config.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&text).unwrap();
    for id in ["E1", "E2", "E3", "E4", "E5", "E6", "E7", "E8", "E9"] {
        assert!(text.contains(&format!("\"{id}\"")), "{id} missing");
    }
    assert_eq!(schema["properties"]["schema_version"]["const"], 1);
}
