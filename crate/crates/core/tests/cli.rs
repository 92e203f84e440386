use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowmap"))
        .args(args)
        .arg("--output-dir")
        .arg(dir)
        .env_remove("FLOWMAP_OUTPUT_DIR")
        .output()
        .unwrap()
}

const SMALL: &[&str] = &[
    "--preset",
    "pendulum",
    "--n-sequences",
    "60",
    "--pool-size",
    "3",
    "--epochs",
    "2",
    "--k-list",
    "1,2",
    "--n-ensembles",
    "20",
];

fn run_ok(dir: &Path, cmd: &str, extra: &[&str]) -> String {
    let mut args = vec![cmd];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    let out = flowmap(dir, &args);
    assert!(
        out.status.success(),
        "{cmd}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        run_ok(dir, "generate", &[]);
        run_ok(dir, "train", &[]);
        run_ok(dir, "analyze", &[]);
    }
    for file in [
        "dataset/dataset.json",
        "models/pool.json",
        "reports/lte.csv",
        "reports/gof.json",
    ] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    let lte = fs::read_to_string(a.path().join("reports/lte.csv")).unwrap();
    let mut lines = lte.lines();
    assert_eq!(lines.next().unwrap(), "K,component,bias,variance,mse,n");
    assert_eq!(lines.count(), 4);
    let gof: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("reports/gof.json")).unwrap()).unwrap();
    assert_eq!(gof.as_array().unwrap().len(), 2);
    assert!(a.path().join("reports/histogram_x1.csv").exists());
    assert!(a.path().join("reports/provenance.json").exists());

    let report = run_ok(a.path(), "report", &[]);
    assert!(report.contains("Var(x2)"));
}

#[test]
fn train_writes_progress_and_resume_matches_a_fresh_run() {
    let fresh = tempfile::tempdir().unwrap();
    let resumed = tempfile::tempdir().unwrap();
    run_ok(fresh.path(), "generate", &[]);
    run_ok(resumed.path(), "generate", &[]);

    let out = flowmap(
        fresh.path(),
        &[&["train"], SMALL, &["--pool-size", "4"]].concat(),
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model 4/4 epoch 2 loss "));

    run_ok(resumed.path(), "train", &["--pool-size", "2"]);
    run_ok(resumed.path(), "train", &["--pool-size", "4", "--resume"]);
    assert_eq!(
        fs::read(fresh.path().join("models/pool.json")).unwrap(),
        fs::read(resumed.path().join("models/pool.json")).unwrap()
    );
}

#[test]
fn predict_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), "generate", &[]);
    run_ok(dir.path(), "train", &[]);

    run_ok(dir.path(), "predict", &["--horizon", "0"]);
    let csv = fs::read_to_string(dir.path().join("reports/rollout.csv")).unwrap();
    assert_eq!(
        csv.lines().collect::<Vec<_>>(),
        vec!["step,t,v1,v2", "0,0,-1.193,-3.876"]
    );

    run_ok(
        dir.path(),
        "predict",
        &[
            "--horizon",
            "5",
            "--individual",
            "1",
            "--compare-oracle",
            "--per-member",
        ],
    );
    let csv = fs::read_to_string(dir.path().join("reports/rollout.csv")).unwrap();
    assert!(csv.starts_with("step,t,v1,v2,u1,u2\n"));
    assert_eq!(csv.lines().count(), 7);
    assert!(dir.path().join("reports/rollout_individual_1.csv").exists());
    let members = fs::read_to_string(dir.path().join("reports/rollout_members.csv")).unwrap();
    assert_eq!(members.lines().count(), 1 + 5 * 3);
}

#[test]
fn chaotic_preset_dataset_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowmap(
        dir.path(),
        &["generate", "--preset", "chaotic", "--n-sequences", "4"],
    );
    assert!(out.status.success());
    let ds = flowmap_ensemble::Dataset::load(&dir.path().join("dataset/dataset.json")).unwrap();
    assert_eq!(ds.meta.memory_len, 60);
    assert_eq!(ds.sequences[0].len(), 62);
    assert_eq!(ds.sequences[0][0].len(), 3);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, "preset = \"pendulum\"\nn_sequences = 7\nepochs = 3\n").unwrap();
    let out = flowmap(
        dir.path(),
        &[
            "generate",
            "--config",
            cfg.to_str().unwrap(),
            "--n-sequences",
            "9",
        ],
    );
    assert!(out.status.success());
    let ds = flowmap_ensemble::Dataset::load(&dir.path().join("dataset/dataset.json")).unwrap();
    assert_eq!(ds.len(), 9);
    let resolved = fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert!(resolved.contains("epochs = 3"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_flowmap"))
        .args(["generate", "--preset", "pendulum", "--n-sequences", "3"])
        .env("FLOWMAP_OUTPUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("dataset/dataset.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config_error = flowmap(
        dir.path(),
        &["generate", "--preset", "pendulum", "--k-list", "0"],
    );
    assert_eq!(config_error.status.code(), Some(2));

    let missing = flowmap(dir.path(), &["train", "--preset", "pendulum"]);
    assert_eq!(missing.status.code(), Some(4));

    run_ok(dir.path(), "generate", &[]);
    let diverged = flowmap(
        dir.path(),
        &[&["train"], SMALL, &["--lr", "1e30", "--epochs", "10"]].concat(),
    );
    assert_eq!(
        diverged.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&diverged.stderr)
    );
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("0"));
}
