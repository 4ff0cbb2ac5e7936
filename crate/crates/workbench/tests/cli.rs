use std::path::Path;
use std::process::Command;

fn dpbalance(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dpbalance"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dpbalance(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_trace_then_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    ok(&[
        "gen-trace",
        "--count",
        "200",
        "--seed",
        "4",
        "--out",
        s(&trace),
    ]);
    assert_eq!(
        std::fs::read_to_string(&trace).unwrap().lines().count(),
        200
    );

    let out = dir.path().join("run");
    let stdout = ok(&[
        "run",
        "--trace",
        s(&trace),
        "--router",
        "brh",
        "--H",
        "40",
        "--predictor",
        "survival",
        "--beta",
        "48",
        "--gamma",
        "0.9",
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("200 requests"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["sim"]["router"]["score"]["horizon"], 40);
    assert_eq!(summary["summary"]["completed"], 200);
    assert!(out.join("steps.csv").exists());
}

#[test]
fn sweep_from_toml() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    std::fs::write(
        &config,
        r#"
mode = "grid"
[base]
workers = 4
[base.router]
kind = "jsq"
[axes]
router = ["jsq", "br0"]
seed = [0, 1]
[synthetic]
count = 100
rate = 0.05
"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    ok(&["sweep", "--config", s(&config), "--out", s(&out)]);
    let report = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(report.lines().count(), 5);
    assert!(report.starts_with("cell,G,router"));
}

#[test]
fn convert_azure_writes_native() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("a.csv");
    std::fs::write(
        &csv,
        "TIMESTAMP,ContextTokens,GeneratedTokens\n2024-05-10 00:00:00,10,1200\n2024-05-10 00:00:01,20,5\n",
    )
    .unwrap();
    let native = dir.path().join("a.jsonl");
    ok(&["convert-azure", "--trace", s(&csv), "--out", s(&native)]);
    assert_eq!(std::fs::read_to_string(&native).unwrap().lines().count(), 1);
}

#[test]
fn bad_input_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.jsonl");
    std::fs::write(
        &trace,
        "{\"id\":0,\"arrival_step\":0,\"prompt_tokens\":5,\"output_tokens\":0}\n",
    )
    .unwrap();
    let out = dpbalance(&[
        "run",
        "--trace",
        s(&trace),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    assert!(!dpbalance(&["run", "--router", "nope", "--out", "x"])
        .status
        .success());
}
