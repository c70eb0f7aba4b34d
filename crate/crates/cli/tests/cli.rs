use std::fs;
use std::process::Command;

fn dcs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dcs"))
}

#[test]
fn writes_csv_to_stdout() {
    let out = dcs()
        .args(["--n-su", "10", "--runs", "2", "--algorithm", "local"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("sweep_param,sweep_value,run,seed,algorithm,criterion"));
    assert!(lines[1].contains(",LOCAL,SUM_ERROR,"));
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let status = dcs()
            .args(["--n-su", "15", "--runs", "2", "--seed", "3", "--out"])
            .arg(&path)
            .status()
            .unwrap();
        assert!(status.success());
        fs::read(path).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn config_file_with_sweep_and_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{"algorithm": "CF", "criterion": "CONSTRAINED_MISS", "runs": 2, "base_seed": 1,
            "sweep": {"param": "n_su", "values": [6, 9]}}"#,
    )
    .unwrap();
    let out = dir.path().join("rows.json");
    let snap = dir.path().join("snap.json");
    let status = dcs()
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--snapshot")
        .arg(&snap)
        .status()
        .unwrap();
    assert!(status.success());
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[2]["sweep_value"], 9.0);
    assert_eq!(rows[0]["algorithm"], "CF");
    let snaps: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(snap).unwrap()).unwrap();
    assert_eq!(snaps.as_array().unwrap().len(), 2);
    assert_eq!(snaps[0]["structure"]["kind"], "partition");
}

#[test]
fn negative_dbm_is_accepted() {
    let out = dcs()
        .args([
            "--n-su",
            "5",
            "--runs",
            "1",
            "--power-dbm",
            "-10",
            "--format",
            "json",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows[0]["report_count"], 0);
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"runs": 0}"#).unwrap();
    let out = dcs().arg("--config").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("runs"));
    let missing = dcs()
        .args(["--config", "/nonexistent/x.json"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
}

#[test]
fn unwritable_output_fails() {
    let out = dcs()
        .args([
            "--n-su",
            "5",
            "--runs",
            "1",
            "--out",
            "/nonexistent/dir/rows.csv",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
