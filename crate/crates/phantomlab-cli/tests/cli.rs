//! End-to-end CLI checks: exit codes, summary lines, trace determinism, and
//! scenario files.

use std::process::Command;

fn phantomlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phantomlab"))
}

#[test]
fn run_prints_success_summary_with_exploited_flaws() {
    let output = phantomlab()
        .args(["run", "--profile", "alink", "--attack", "hijacking", "--seed", "7"])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("SUCCESS"));
    assert!(stdout.contains("{F1.1, F1.3, F2, F3, F4}"));
}

#[test]
fn expect_mismatch_exits_one() {
    let output = phantomlab()
        .args([
            "run",
            "--profile",
            "smartthings",
            "--attack",
            "substitution",
            "--expect",
            "success",
        ])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn config_errors_exit_two_without_a_stack_trace() {
    let output = phantomlab()
        .args(["run", "--profile", "alink", "--attack", "dos", "--flaws", "F9"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("F9"));
    assert!(!stderr.contains("panicked"));

    // A platform-mismatched flaw override is also a config error.
    let output = phantomlab()
        .args(["run", "--profile", "kasa", "--attack", "dos", "--flaws", "F1.1"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("platform"));
}

#[test]
fn matrix_matches_the_builtin_fixture() {
    let output = phantomlab()
        .args(["matrix", "--expect", "table3"])
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("matrix matches the table3 fixture"));
}

#[test]
fn matrix_under_full_mitigations_differs_from_the_fixture() {
    let output = phantomlab()
        .args(["matrix", "--mitigations", "M1,M2,M3", "--expect", "table3"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn explore_depth_zero_prints_only_the_initial_combination() {
    let output = phantomlab()
        .args(["explore", "--profile", "kasa", "--depth", "0"])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("reachable combinations (1):"));
    assert!(stdout.contains("(S2, S1, S1)"));
}

#[test]
fn equal_seeds_give_byte_identical_trace_files() {
    let dir = tempfile::tempdir().expect("tempdir");
    let trace_a = dir.path().join("a.jsonl");
    let trace_b = dir.path().join("b.jsonl");
    for path in [&trace_a, &trace_b] {
        let output = phantomlab()
            .args([
                "run",
                "--profile",
                "mijia",
                "--attack",
                "substitution",
                "--seed",
                "42",
                "--trace",
            ])
            .arg(path)
            .output()
            .expect("binary runs");
        assert!(output.status.success());
    }
    let a = std::fs::read(&trace_a).unwrap();
    let b = std::fs::read(&trace_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().expect("tempdir");
    let trace_env = dir.path().join("env.jsonl");
    let trace_flag = dir.path().join("flag.jsonl");
    let output = phantomlab()
        .env("PHANTOMLAB_SEED", "99")
        .args(["run", "--profile", "alink", "--attack", "dos", "--trace"])
        .arg(&trace_env)
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let output = phantomlab()
        .args(["run", "--profile", "alink", "--attack", "dos", "--seed", "99", "--trace"])
        .arg(&trace_flag)
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    assert_eq!(
        std::fs::read(&trace_env).unwrap(),
        std::fs::read(&trace_flag).unwrap()
    );
}

#[test]
fn scenario_files_drive_runs() {
    let dir = tempfile::tempdir().expect("tempdir");
    let scenario = dir.path().join("scenario.toml");
    let report = dir.path().join("report.json");
    std::fs::write(
        &scenario,
        r#"
profile = "kasa"
attack = "hijacking"
seed = 5
mitigations = []
grants = "full"
"#,
    )
    .unwrap();
    let output = phantomlab()
        .args(["run", "--scenario"])
        .arg(&scenario)
        .args(["--report"])
        .arg(&report)
        .args(["--expect", "success"])
        .output()
        .expect("binary runs");
    assert!(output.status.success(), "{output:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(report["status"], "success");
    assert_eq!(report["exploited_flaws"], serde_json::json!(["F1.2", "F3"]));
}

#[test]
fn baseline_run_reports_completion() {
    let output = phantomlab()
        .args([
            "run",
            "--profile",
            "joylink",
            "--attack",
            "baseline",
            "--mitigations",
            "M1,M2,M3",
        ])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("COMPLETE"));
    assert!(stdout.contains("(S4, S4, S4)"));
}
