use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_throwplan"));
    c.env_remove("THROWPLAN_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Directory with tube data, a briefly trained model and a small hedgehog.
fn artifacts() -> &'static PathBuf {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().to_path_buf();
        for args in [
            &["--seed", "1", "brt", "generate"][..],
            &[
                "--seed",
                "1",
                "brt",
                "train",
                "--epochs",
                "5",
                "--no-augment",
            ],
            &["--seed", "7", "hedgehog", "build", "--samples", "20000"],
        ] {
            let o = run(&d, args);
            assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
        }
        (tmp, d)
    })
    .1
}

#[test]
fn zero_samples_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["hedgehog", "build", "--samples", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("samples"));
    assert!(!d.path().join("artifacts").exists());
}

#[test]
fn unknown_flag_and_bad_vector_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(d.path(), &["plan", "--nope"])), 2);
    assert_eq!(code(&run(d.path(), &["plan", "--target", "1,2"])), 2);
    assert_eq!(code(&run(d.path(), &["--help"])), 0);
}

#[test]
fn hedgehog_build_is_byte_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let build = |out: &str| {
        let o = run(
            d.path(),
            &[
                "--seed",
                "11",
                "hedgehog",
                "build",
                "--samples",
                "3000",
                "--out",
                out,
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        String::from_utf8(o.stdout).unwrap()
    };
    let summary = build("a.bin");
    build("b.bin");
    assert!(summary.contains("cells populated"));
    let read = |n: &str| std::fs::read(d.path().join(n)).unwrap();
    assert_eq!(read("a.bin"), read("b.bin"));
    let manifest: serde_json::Value = serde_json::from_slice(&read("a.json")).unwrap();
    assert_eq!(manifest["meta"]["seed"], 11);
    assert_eq!(manifest["meta"]["n_samples"], 3000);
    assert!(manifest["version"].is_string());
}

#[test]
fn seed_from_environment_and_flag_precedence() {
    let d = tempfile::tempdir().unwrap();
    let build = |env: Option<&str>, flag: Option<&str>, out: &str| {
        let mut c = bin();
        c.current_dir(d.path());
        if let Some(e) = env {
            c.env("THROWPLAN_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let o = c
            .args(["hedgehog", "build", "--samples", "2000", "--out", out])
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(d.path().join(out)).unwrap()
    };
    let by_flag = build(None, Some("4"), "flag.bin");
    assert_eq!(build(Some("4"), None, "env.bin"), by_flag);
    assert_eq!(build(Some("3"), Some("4"), "both.bin"), by_flag);
    assert_ne!(build(Some("3"), None, "three.bin"), by_flag);
}

#[test]
fn write_failure_exits_3() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("file"), "x").unwrap();
    let o = run(
        d.path(),
        &[
            "hedgehog",
            "build",
            "--samples",
            "500",
            "--out",
            "file/sub/h.bin",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn brt_generate_writes_csv_and_sidecar() {
    let d = artifacts();
    let csv = std::fs::read_to_string(d.join("artifacts/brt.csv")).unwrap();
    assert!(csv.starts_with("r,z,rd,zd,label\n"));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("artifacts/brt.json")).unwrap())
            .unwrap();
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["generation"]["n_landing"], 2160);
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    let positives = csv.lines().filter(|l| l.ends_with(",1")).count();
    assert_eq!(meta["n_positive"], positives);
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("artifacts/brt_model.json")).unwrap())
            .unwrap();
    assert!(model["meta"]["test_accuracy"].as_f64().unwrap() > 0.9);
    assert_eq!(model["meta"]["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn training_rejects_single_class_data() {
    let d = tempfile::tempdir().unwrap();
    let src = artifacts().join("artifacts");
    let csv = std::fs::read_to_string(src.join("brt.csv")).unwrap();
    let only_inside: String = csv
        .lines()
        .filter(|l| !l.ends_with(",0"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(d.path().join("one.csv"), only_inside).unwrap();
    std::fs::copy(src.join("brt.json"), d.path().join("one.json")).unwrap();
    let o = run(
        d.path(),
        &["brt", "train", "--data", "one.csv", "--out", "m.json"],
    );
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("both inside and outside"),
        "{}",
        stderr(&o)
    );
    assert!(!d.path().join("m.json").exists());
}

#[test]
fn plan_respects_limit_and_simulates() {
    let d = artifacts();
    let o = run(
        d,
        &[
            "plan",
            "--target",
            "2.0,0.0,0.0",
            "--limit",
            "10",
            "--out",
            "plan.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["schema_version"], 1);
    let n = plan["configurations"].as_array().unwrap().len();
    assert!((1..=10).contains(&n));

    let o = run(d, &["simulate", "--plan", "plan.json", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["total"], n);
    assert_eq!(report["succeeded"], n);
}

#[test]
fn unreachable_target_exits_4() {
    let o = run(artifacts(), &["plan", "--target", "2,0,6"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("no feasible"));
}

#[test]
fn missing_artifacts_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["plan", "--target", "2,0,0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hedgehog.bin"));
}

#[test]
fn bench_reports_are_json_with_schema() {
    let d = artifacts();
    let o = run(
        d,
        &[
            "bench",
            "success",
            "--limit",
            "20",
            "--z-min",
            "-0.2",
            "--z-max",
            "0.2",
            "--out",
            "success.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 4);
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("success.json")).unwrap()).unwrap();
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["rows"].as_array().unwrap().len(), 5);

    let o = run(d, &["bench", "latency", "--queries", "2", "--json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["median_overall_us"].as_f64().unwrap() > 0.0);
}

#[test]
fn adaptive_with_bundled_scenario() {
    let scenario =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/scenarios/zero_disturbance.json");
    let o = run(
        artifacts(),
        &[
            "adaptive",
            "--scenario",
            scenario.to_str().unwrap(),
            "--json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["winner"], "keep_target");
}

#[test]
fn config_file_is_applied_and_validated() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.json"), "{ not json").unwrap();
    let o = run(d.path(), &["--config", "bad.json", "brt", "generate"]);
    assert_eq!(code(&o), 2);
    std::fs::write(
        d.path().join("cfg.json"),
        r#"{ "output_dir": "elsewhere", "seed": 5, "generation": { "n_landing": 240, "horizon": 1.0, "dt": 0.025, "v_cap": 5.0 } }"#,
    )
    .unwrap();
    let o = run(d.path(), &["--config", "cfg.json", "brt", "generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(d.path().join("elsewhere/brt.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["generation"]["n_landing"], 240);
}
