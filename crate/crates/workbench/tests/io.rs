use dpbalance_core::{run_trace, RouterKind, RouterParams, SimConfig};
use dpbalance_workbench::{
    emit_results, generate_synthetic, load_trace, save_trace, LoadOptions, SynthSpec, TraceFormat,
};

fn small(seed: u64) -> SynthSpec {
    SynthSpec {
        count: 300,
        seed,
        ..SynthSpec::heavy_tailed()
    }
}

#[test]
fn native_round_trip_preserves_requests() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let trace = generate_synthetic(&small(1)).unwrap();
    save_trace(&path, &trace).unwrap();
    let back = load_trace(&path, TraceFormat::Native, &LoadOptions::default()).unwrap();
    assert_eq!(back, trace);
}

#[test]
fn azure_csv_is_filtered_and_binned() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("azure.csv");
    std::fs::write(
        &path,
        "TIMESTAMP,ContextTokens,GeneratedTokens\n\
         2024-05-10 00:00:00.000000,100,1500\n\
         2024-05-10 00:00:00.120000,200,900\n\
         2024-05-10 00:00:01.200000,300,2000\n",
    )
    .unwrap();
    let trace = load_trace(
        &path,
        TraceFormat::Azure,
        &LoadOptions::for_format(TraceFormat::Azure),
    )
    .unwrap();
    assert_eq!(trace.len(), 2);
    assert_eq!((trace[0].arrival_step, trace[0].prefill_len), (0, 100));
    assert_eq!((trace[1].arrival_step, trace[1].output_len), (20, 2000));
}

#[test]
fn emitted_files_are_byte_stable() {
    let trace = generate_synthetic(&small(2)).unwrap();
    let config = SimConfig {
        router: RouterParams::new(RouterKind::Br0),
        seed: 2,
        ..SimConfig::default()
    };
    let emit = || {
        let dir = tempfile::tempdir().unwrap();
        let output = run_trace(&trace, &config, None).unwrap();
        emit_results(dir.path(), &output, config.workers, &config).unwrap();
        (
            std::fs::read(dir.path().join("summary.json")).unwrap(),
            std::fs::read(dir.path().join("steps.csv")).unwrap(),
        )
    };
    let (summary, steps) = emit();
    assert_eq!((summary.clone(), steps.clone()), emit());
    let doc: serde_json::Value = serde_json::from_slice(&summary).unwrap();
    assert_eq!(doc["config"]["router"]["kind"], "br0");
    let rows = std::str::from_utf8(&steps).unwrap().lines().count() as u64;
    assert!(rows > doc["summary"]["steps"].as_u64().unwrap());
}
