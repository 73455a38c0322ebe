//! End-to-end checks of the `ptest` binary: argument handling, instance
//! files, and output formats.

use std::process::Command;

fn ptest() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ptest"))
}

#[test]
fn validate_builtin_instances() {
    for name in [
        "two_state",
        "three_state",
        "five_state",
        "nonconvex_example",
    ] {
        let out = ptest().args(["validate", name]).output().unwrap();
        assert!(out.status.success(), "validate {name} failed");
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("rho positive:           ok"), "{text}");
    }
}

#[test]
fn validate_rejects_unknown_instance() {
    let out = ptest()
        .args(["validate", "missing_instance"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn validate_flags_degenerate_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("degenerate.json");
    // constant reward violates the strict reward inequality
    std::fs::write(
        &path,
        r#"{
            "n_states": 2, "n_actions": 1, "gamma": 0.9,
            "rho": [0.5, 0.5],
            "reward": [[0.3], [0.3]],
            "kernel": [[[0.6, 0.4]], [[0.2, 0.8]]],
            "policy": [[1.0], [1.0]]
        }"#,
    )
    .unwrap();
    let out = ptest()
        .args(["validate", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "degenerate instance must exit 2"
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("reward inequality:      FAIL"), "{text}");
}

#[test]
fn solve_reports_certificate() {
    let out = ptest()
        .args(["solve", "two_state", "--sigma", "0.05"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("u_zeta"), "{text}");
    assert!(text.contains("converged"), "{text}");
}

#[test]
fn run_emits_json_record() {
    let out = ptest()
        .args([
            "run",
            "two_state",
            "--delta",
            "0.2",
            "--seed",
            "7",
            "--max-rounds",
            "100000",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let record: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(record["delta"], 0.2);
    assert_eq!(record["outcome"]["kind"], "decided");
}

#[test]
fn sweep_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    let out_path = dir.path().join("rows.csv");
    std::fs::write(
        &spec_path,
        format!(
            r#"{{
                "instance": "two_state",
                "delta_grid": [0.1],
                "trials": 1,
                "seed": 5,
                "max_rounds": 100000,
                "out": "{}"
            }}"#,
            out_path.display()
        ),
    )
    .unwrap();
    let out = ptest()
        .args(["sweep", "--spec", spec_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(&out_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "delta,trial,seed,tau,decision,correct,wall_ms,solver_mode"
    );
    // exactly one data row for trials = 1
    assert_eq!(lines.count(), 1);
    let summary = std::fs::read_to_string(out_path.with_extension("summary.csv")).unwrap();
    assert!(summary.starts_with("delta,trials,decided"));
}

#[test]
fn instance_file_with_threshold_loads() {
    // a custom instance with a nonzero threshold exercises the load-time
    // reward shift
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("custom.toml");
    std::fs::write(
        &path,
        r#"
n_states = 2
n_actions = 1
gamma = 0.8
rho = [0.5, 0.5]
threshold = -0.2
reward = [[0.6], [-0.7]]
kernel = [[[0.7, 0.3]], [[0.4, 0.6]]]
policy = [[1.0], [1.0]]
"#,
    )
    .unwrap();
    let out = ptest()
        .args(["validate", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn ctime_prints_report() {
    let out = ptest().args(["ctime", "two_state"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("T* = "), "{text}");
    assert!(text.contains("predicted stopping-time slope"), "{text}");
}
