use std::path::Path;
use std::process::Command;

fn difftraj(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_difftraj"))
        .args(["--preset", "tiny", "--out"])
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) {
    let o = difftraj(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn staged_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for step in ["gen-data", "train-ddpm", "sample", "extract", "train-clf", "eval"] {
        ok(out, &[step]);
    }
    for f in ["data.json", "ddpm.bin", "ddpm.bin.json", "features.csv", "classifier.json", "report.json", "roc_class0.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["name"], "tiny");
    assert!(report["version"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    let first = std::fs::read(out.join("report.json")).unwrap();
    ok(out, &["eval"]);
    assert_eq!(first, std::fs::read(out.join("report.json")).unwrap());
}

#[test]
fn stale_cache_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for step in ["gen-data", "train-ddpm", "sample", "extract"] {
        ok(out, &[step]);
    }
    // a model trained with another seed invalidates the cached features
    let o = Command::new(env!("CARGO_BIN_EXE_difftraj"))
        .args(["--preset", "tiny", "--seed", "9", "--out"])
        .arg(out)
        .arg("train-ddpm")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(difftraj(out, &["train-clf"]).status.code(), Some(4));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"name": "x", "unknown": 1}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_difftraj"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .arg("gen-data")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(difftraj(dir.path(), &["--preset", "nope", "gen-data"]).status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_pipeline_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data"]);
    let o = difftraj(dir.path(), &["sample"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
}

#[test]
fn config_round_trips_through_show_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = difftraj(dir.path(), &["show-config"]);
    assert!(o.status.success());
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, &o.stdout).unwrap();
    let again = Command::new(env!("CARGO_BIN_EXE_difftraj"))
        .arg("--config")
        .arg(&cfg)
        .arg("show-config")
        .output()
        .unwrap();
    assert_eq!(o.stdout, again.stdout);
}

#[test]
fn full_report_on_tiny_preset() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["report"]);
    for f in ["report.json", "losses_per_t.csv", "ablation.csv", "summary.csv", "roc_oa_member.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 15);
}
