use std::process::Command;

fn iomtrade() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iomtrade"))
}

#[test]
fn unknown_command_prints_usage_and_exits_2() {
    let out = iomtrade().arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_override_reports_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = iomtrade()
        .args(["solve-ne", "--out"])
        .arg(dir.path())
        .args(["--override", "solver.nope=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "override");
}

#[test]
fn invalid_config_is_rejected_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[generator]\ntheta = [1.5, 1.5]\n").unwrap();
    let out = iomtrade()
        .arg("solve-ne")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid_config");
}

#[test]
fn solve_ne_writes_csvs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = iomtrade()
        .args(["solve-ne", "--seed", "3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(dir.path().join("ne_summary.csv")).unwrap();
    let mut reader = csv::Reader::from_reader(summary.as_bytes());
    let row = reader.records().next().unwrap().unwrap();
    assert_eq!(&row[1], "true");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["command"], "solve-ne");
    for file in manifest["files"].as_array().unwrap() {
        assert!(dir.path().join(file["path"].as_str().unwrap()).exists());
    }
}
