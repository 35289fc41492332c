use std::fs;
use std::process::Command;

fn otshift() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_otshift"));
    cmd.env_remove("OTSHIFT_SEED");
    cmd
}

fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn missing_experiment_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"da_pair": {{"setting": "closed", "global_classes": 2, "dims": 2, "separation": 5.0}}, "output_dir": {:?}}}"#,
            out.display().to_string()
        ),
    );
    let status = otshift().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("experiment"));
    assert!(!out.exists());
}

#[test]
fn run_validate_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"{{"experiment": "labelshift",
                "da_pair": {{"setting": "closed", "global_classes": 3, "dims": 2, "separation": 6.0}},
                "samples_per_domain": 50,
                "estimator": {{"batch_size": 20, "batches": 3, "steps_per_batch": 4}},
                "output_dir": {:?}}}"#,
            out.display().to_string()
        ),
    );
    let v = otshift().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert!(v.status.success());
    assert!(!out.exists());

    let run = |seed: &str| {
        let o = otshift().env("OTSHIFT_SEED", seed).args(["run", "--config"]).arg(&cfg).output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("labelshift.csv")).unwrap()
    };
    let a = run("5");
    let b = run("5");
    let c = run("6");
    assert_eq!(a, b);
    assert_ne!(a, c);

    let bad = otshift().env("OTSHIFT_SEED", "abc").args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn ingest_reports_summary() {
    let dir = tempfile::tempdir().unwrap();
    let features = dir.path().join("f.csv");
    fs::write(&features, "label,f0\n1,0.5\n1,0.25\n0,2\n").unwrap();
    let out = dir.path().join("ingested");
    let o = otshift().args(["ingest", "--features"]).arg(&features).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["samples"], 3);
    assert!(out.join("features.csv").exists());
}
