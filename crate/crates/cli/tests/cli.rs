//! End-to-end checks of the CLI surface: subcommand forms, exit codes,
//! machine-readable output, and on-disk artifacts.

use std::fs;
use std::path::Path;

use byzgrad_cli::{run_with, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};

fn byzgrad(args: &[&str]) -> (i32, String) {
    let argv = std::iter::once("byzgrad").chain(args.iter().copied());
    let mut out = Vec::new();
    let code = run_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn small_config(out_dir: &Path) -> String {
    format!(
        r#"{{
            "n": 3,
            "function": {{"kind": "capacity", "C": 10.0}},
            "x": [1, 1, 1],
            "run": {{"iterations": 300, "metrics_stride": 50, "replications": 2}},
            "seed": 3,
            "out_dir": {:?}
        }}"#,
        out_dir.join("results")
    )
}

#[test]
fn help_everywhere() {
    for args in [
        vec!["--help"],
        vec!["simulate", "--help"],
        vec!["check", "--help"],
        vec!["decode", "--help"],
        vec!["fig1", "--help"],
        vec!["sweep", "--help"],
    ] {
        let (code, text) = byzgrad(&args);
        assert_eq!(code, EXIT_OK, "{args:?}");
        assert!(text.contains("Usage"), "{args:?}");
    }
}

#[test]
fn missing_config_file_exits_2() {
    let (code, _) = byzgrad(&["simulate", "--config", "/nonexistent/config.json"]);
    assert_eq!(code, EXIT_CONFIG);
    let (code, _) = byzgrad(&["check", "--config", "/nonexistent/config.json"]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"{"n": 2, "function": {"kind": "linear", "c": [1.0]}, "x": [0, 0]}"#,
    );
    let (code, _) = byzgrad(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn simulate_writes_replications_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_config(dir.path()));
    let (code, stdout) = byzgrad(&["simulate", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stdout}");
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["replications"], 2);
    let results = dir.path().join("results");
    for name in ["config.json", "rep_00.csv", "rep_01.csv", "aggregate.csv"] {
        assert!(results.join(name).exists(), "{name} missing");
    }
    let rep = fs::read_to_string(results.join("rep_00.csv")).unwrap();
    assert!(rep.starts_with("# config_hash: "));
    assert!(rep.contains("k,err_l2,err_linf,J,zhat_err"));
}

#[test]
fn simulate_seed_override_changes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_config(dir.path()));
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let config = path.to_str().unwrap();
    assert_eq!(
        byzgrad(&["simulate", "--config", config, "--out", out_a.to_str().unwrap()]).0,
        EXIT_OK
    );
    assert_eq!(
        byzgrad(&[
            "simulate",
            "--config",
            config,
            "--out",
            out_b.to_str().unwrap(),
            "--seed",
            "99",
        ])
        .0,
        EXIT_OK
    );
    let a = fs::read_to_string(out_a.join("rep_00.csv")).unwrap();
    let b = fs::read_to_string(out_b.join("rep_00.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn check_reports_qmax_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"{
            "n": 6,
            "function": {"kind": "capacity", "C": 10.0},
            "x": [1, 1, 1, 1, 1, 1],
            "universe": {"mode": "singletons"}
        }"#,
    );
    let (code, stdout) = byzgrad(&["check", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("# q_max: 3"), "{stdout}");
    assert!(stdout.contains("# block_bound: 0"));
    assert!(stdout.contains("# effective_block_bound: 3"));
    assert!(stdout.contains("q,holds,exact"));
    assert!(stdout.contains("3,true,true"));
    assert!(stdout.contains("4,false,true"));
}

#[test]
fn decode_prints_the_minimizer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("instance.json");
    fs::write(
        &path,
        r#"{
            "A": [[1.0], [1.0], [1.0], [1.0]],
            "universe": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]],
            "zbar": [2.0,0,0,0, 0,2.0,0,0, 0,0,9.0,0, 0,0,0,2.0]
        }"#,
    )
    .unwrap();
    let (code, stdout) = byzgrad(&["decode", "--instance", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK, "{stdout}");
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["v"][0], 2.0);
    assert_eq!(summary["decoder"], "weighted_median");
}

#[test]
fn decode_underdetermined_instance_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("instance.json");
    // Rank-1 A with m = 2 cannot be decoded.
    fs::write(
        &path,
        r#"{"A": [[1.0, 1.0], [2.0, 2.0]], "universe": [[1,1]], "zbar": [0.5, 1.0]}"#,
    )
    .unwrap();
    let (code, _) = byzgrad(&["decode", "--instance", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_RUNTIME);
}

#[test]
fn sweep_runs_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_config(dir.path()));
    let (code, stdout) = byzgrad(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--param",
        "perturb.delta",
        "--values",
        "0.01,0.05",
    ]);
    assert_eq!(code, EXIT_OK, "{stdout}");
    assert_eq!(stdout.lines().count(), 2);
    let results = dir.path().join("results");
    assert!(results.join("sweep_perturb_delta_0_01").join("aggregate.csv").exists());
    assert!(results.join("sweep_perturb_delta_0_05").join("aggregate.csv").exists());
}

#[test]
fn sweep_rejects_a_value_that_breaks_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &small_config(dir.path()));
    let (code, _) = byzgrad(&[
        "sweep",
        "--config",
        path.to_str().unwrap(),
        "--param",
        "schedule.alpha",
        "--values",
        "\"not a number\"",
    ]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn binary_runs() {
    let exe = env!("CARGO_BIN_EXE_byzgrad");
    let output = std::process::Command::new(exe)
        .arg("--help")
        .output()
        .unwrap();
    assert!(output.status.success());
}
