//! Result files. Output is byte-stable for a given run: fields are written
//! in declaration order and floats use Rust's shortest round-trip format.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dpbalance_core::{RunOutput, RunSummary, StepRecord};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sweep::SweepRow;

#[derive(Serialize)]
struct SummaryDocument<'a, C: Serialize> {
    config: &'a C,
    summary: &'a RunSummary,
}

pub fn write_summary<W: Write, C: Serialize>(
    writer: W,
    summary: &RunSummary,
    config: &C,
) -> Result<()> {
    let mut out = BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut out, &SummaryDocument { config, summary })?;
    out.write_all(b"\n")
        .map_err(|e| Error::io("<summary>", e))?;
    out.flush().map_err(|e| Error::io("<summary>", e))
}

pub fn write_steps<W: Write>(writer: W, records: &[StepRecord], workers: usize) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["k".to_string()];
    header.extend((0..workers).map(|g| format!("load_{g}")));
    header.extend(["imbalance_total", "imbalance_spread", "step_time_ms"].map(String::from));
    csv.write_record(&header)?;
    for r in records {
        let mut row = Vec::with_capacity(workers + 4);
        row.push(r.k.to_string());
        row.extend(r.loads.iter().map(u64::to_string));
        row.push(r.imbalance_total.to_string());
        row.push(r.imbalance_spread.to_string());
        row.push(r.step_time_ms.to_string());
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|e| Error::io("<steps>", e))
}

const SWEEP_HEADER: [&str; 17] = [
    "cell",
    "G",
    "router",
    "predictor",
    "H",
    "beta",
    "gamma",
    "seed",
    "rate",
    "avg_imbalance_spread",
    "avg_imbalance_total",
    "throughput_proxy",
    "total_output_tokens",
    "total_time_ms",
    "steps",
    "completed",
    "error",
];

pub fn write_sweep_report<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(SWEEP_HEADER)?;
    for (i, row) in rows.iter().enumerate() {
        let c = &row.cell;
        let mut fields = vec![
            i.to_string(),
            c.workers.to_string(),
            c.router.to_string(),
            c.predictor.to_string(),
            c.horizon.to_string(),
            c.beta.to_string(),
            c.gamma.to_string(),
            c.seed.to_string(),
            row.rate.map(|r| r.to_string()).unwrap_or_default(),
        ];
        match &row.summary {
            Some(s) => fields.extend([
                s.avg_imbalance_spread.to_string(),
                s.avg_imbalance_total.to_string(),
                s.throughput_proxy.to_string(),
                s.total_output_tokens.to_string(),
                s.total_time_ms.to_string(),
                s.steps.to_string(),
                s.completed.to_string(),
            ]),
            None => fields.extend(std::iter::repeat_n(String::new(), 7)),
        }
        fields.push(row.error.clone().unwrap_or_default());
        csv.write_record(&fields)?;
    }
    csv.flush().map_err(|e| Error::io("<sweep>", e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `summary.json` and `steps.csv` into `dir`, creating it if needed.
pub fn emit_results<C: Serialize>(
    dir: &Path,
    output: &RunOutput,
    workers: usize,
    config: &C,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = dir.join("summary.json");
    write_summary(create(&summary)?, &output.summary, config)?;
    let steps = dir.join("steps.csv");
    write_steps(create(&steps)?, &output.records, workers)?;
    Ok(vec![summary, steps])
}

/// Writes `sweep.csv` into `dir`, creating it if needed.
pub fn emit_sweep(dir: &Path, rows: &[SweepRow]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sweep.csv");
    write_sweep_report(create(&path)?, rows)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::SweepCell;
    use dpbalance_core::{PredictorKind, RouterKind};

    #[test]
    fn empty_steps_is_header_only() {
        let mut buf = Vec::new();
        write_steps(&mut buf, &[], 3).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "k,load_0,load_1,load_2,imbalance_total,imbalance_spread,step_time_ms\n"
        );
    }

    #[test]
    fn steps_rows() {
        let record = StepRecord {
            k: 4,
            loads: vec![10, 3],
            imbalance_total: 7,
            imbalance_spread: 7,
            admissions: 1,
            departures: 0,
            active: 2,
            step_time_ms: 50.1,
        };
        let mut buf = Vec::new();
        write_steps(&mut buf, &[record], 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1), Some("4,10,3,7,7,50.1"));
    }

    #[test]
    fn sweep_one_row_per_cell() {
        let cell = SweepCell {
            workers: 8,
            beta: 48.0,
            gamma: 0.9,
            horizon: 80,
            router: RouterKind::Brh,
            predictor: PredictorKind::Oracle,
            seed: 1,
        };
        let rows = vec![
            SweepRow {
                cell: cell.clone(),
                rate: Some(0.5),
                summary: Some(RunSummary::empty()),
                error: None,
            },
            SweepRow {
                cell,
                rate: None,
                summary: None,
                error: Some("boom".into()),
            },
        ];
        let mut buf = Vec::new();
        write_sweep_report(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().ends_with(",boom"));
    }

    #[test]
    fn summary_echoes_config() {
        let mut buf = Vec::new();
        write_summary(&mut buf, &RunSummary::empty(), &serde_json::json!({"G": 8})).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["config"]["G"], 8);
        assert_eq!(v["summary"]["completed"], 0);
    }
}
