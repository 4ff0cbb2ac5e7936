//! Trace files.
//!
//! The native format is one JSON object per line:
//!
//! ```text
//! {"id":0,"arrival_step":0,"prompt_tokens":812,"output_tokens":1204,"prompt_key":17}
//! ```
//!
//! `arrival_ms` may replace `arrival_step`; millisecond arrivals are binned
//! to steps relative to the earliest one. Azure LLM inference traces are
//! read from their CSV export (`TIMESTAMP,ContextTokens,GeneratedTokens`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use dpbalance_core::model::validate_trace;
use dpbalance_core::Request;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceFormat {
    #[default]
    Native,
    Azure,
}

impl std::str::FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "native" | "jsonl" => Ok(Self::Native),
            "azure" | "csv" => Ok(Self::Azure),
            other => Err(Error::Config(format!("unknown trace format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_step: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_ms: Option<u64>,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_key: Option<u64>,
}

impl From<&Request> for TraceRecord {
    fn from(r: &Request) -> Self {
        Self {
            id: r.id,
            arrival_step: Some(r.arrival_step),
            arrival_ms: None,
            prompt_tokens: r.prefill_len,
            output_tokens: r.output_len,
            prompt_key: r.prompt_key,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    /// Divisor from milliseconds to decode steps.
    pub ms_per_step: f64,
    /// Keep only requests with more output tokens than this.
    pub filter_output_gt: Option<u64>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            ms_per_step: 60.0,
            filter_output_gt: None,
        }
    }
}

impl LoadOptions {
    /// Defaults per format; Azure traces drop outputs of 1000 tokens or fewer.
    pub fn for_format(format: TraceFormat) -> Self {
        Self {
            filter_output_gt: (format == TraceFormat::Azure).then_some(1000),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.ms_per_step > 0.0) || !self.ms_per_step.is_finite() {
            return Err(Error::Config(format!(
                "ms_per_step must be positive, got {}",
                self.ms_per_step
            )));
        }
        Ok(())
    }

    fn keeps(&self, output: u64) -> bool {
        self.filter_output_gt.is_none_or(|min| output > min)
    }

    fn bin(&self, ms: u64, origin: u64) -> u64 {
        ((ms - origin) as f64 / self.ms_per_step).floor() as u64
    }
}

pub fn load_trace(path: &Path, format: TraceFormat, options: &LoadOptions) -> Result<Vec<Request>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        TraceFormat::Native => parse_native(reader, options),
        TraceFormat::Azure => parse_azure(reader, options),
    }
}

enum Arrival {
    Step(u64),
    Ms(u64),
}

fn finish(mut rows: Vec<(Arrival, Request)>, options: &LoadOptions) -> Result<Vec<Request>> {
    let origin = rows
        .iter()
        .filter_map(|(a, _)| match a {
            Arrival::Ms(ms) => Some(*ms),
            Arrival::Step(_) => None,
        })
        .min()
        .unwrap_or(0);
    let mut trace: Vec<Request> = rows
        .drain(..)
        .map(|(arrival, mut request)| {
            request.arrival_step = match arrival {
                Arrival::Step(k) => k,
                Arrival::Ms(ms) => options.bin(ms, origin),
            };
            request
        })
        .collect();
    trace.sort_by_key(|r| (r.arrival_step, r.id));
    validate_trace(&trace)?;
    Ok(trace)
}

pub fn parse_native<R: BufRead>(reader: R, options: &LoadOptions) -> Result<Vec<Request>> {
    options.validate()?;
    let mut rows = Vec::new();
    let (mut steps, mut millis) = (false, false);
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        if record.prompt_tokens == 0 {
            return Err(fail("prompt_tokens must be at least 1".into()));
        }
        if record.output_tokens == 0 {
            return Err(fail("output_tokens must be at least 1".into()));
        }
        let arrival = match (record.arrival_step, record.arrival_ms) {
            (Some(k), None) => {
                steps = true;
                Arrival::Step(k)
            }
            (None, Some(ms)) => {
                millis = true;
                Arrival::Ms(ms)
            }
            _ => {
                return Err(fail(
                    "exactly one of arrival_step and arrival_ms is required".into(),
                ))
            }
        };
        if steps && millis {
            return Err(fail(
                "arrival_step and arrival_ms are mixed in one file".into(),
            ));
        }
        if !options.keeps(record.output_tokens) {
            continue;
        }
        rows.push((
            arrival,
            Request {
                id: record.id,
                arrival_step: 0,
                prefill_len: record.prompt_tokens,
                output_len: record.output_tokens,
                prompt_key: record.prompt_key,
            },
        ));
    }
    finish(rows, options)
}

#[derive(Debug, Deserialize)]
struct AzureRow {
    #[serde(rename = "TIMESTAMP")]
    timestamp: String,
    #[serde(rename = "ContextTokens")]
    context_tokens: u64,
    #[serde(rename = "GeneratedTokens")]
    generated_tokens: u64,
}

fn parse_timestamp(s: &str) -> Option<u64> {
    let s = s.trim();
    let utc = DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f%:z"))
        .map(|t| t.naive_utc())
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
        .ok()?;
    u64::try_from(utc.and_utc().timestamp_millis()).ok()
}

/// Ids are assigned in file order; rows dropped by the output filter keep
/// their numbers, so ids match row positions in the source file.
pub fn parse_azure<R: Read>(reader: R, options: &LoadOptions) -> Result<Vec<Request>> {
    options.validate()?;
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, row) in csv.deserialize::<AzureRow>().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if !options.keeps(row.generated_tokens) {
            continue;
        }
        let fail = |message: &str| Error::Parse {
            line,
            message: message.into(),
        };
        if row.context_tokens == 0 {
            return Err(fail("ContextTokens must be at least 1"));
        }
        if row.generated_tokens == 0 {
            return Err(fail("GeneratedTokens must be at least 1"));
        }
        let ms = parse_timestamp(&row.timestamp)
            .ok_or_else(|| fail(&format!("unparseable timestamp {:?}", row.timestamp)))?;
        rows.push((
            Arrival::Ms(ms),
            Request {
                id: i as u64,
                arrival_step: 0,
                prefill_len: row.context_tokens,
                output_len: row.generated_tokens,
                prompt_key: None,
            },
        ));
    }
    finish(rows, options)
}

pub fn write_native<W: Write>(writer: W, trace: &[Request]) -> Result<()> {
    let mut out = BufWriter::new(writer);
    for request in trace {
        serde_json::to_writer(&mut out, &TraceRecord::from(request))?;
        out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
    }
    out.flush().map_err(|e| Error::io("<trace>", e))
}

pub fn save_trace(path: &Path, trace: &[Request]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_native(file, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn native(text: &str) -> Result<Vec<Request>> {
        parse_native(text.as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn three_lines_sorted() {
        let trace = native(
            r#"{"id":2,"arrival_step":5,"prompt_tokens":10,"output_tokens":3}
{"id":0,"arrival_step":0,"prompt_tokens":7,"output_tokens":1,"prompt_key":4}

{"id":1,"arrival_step":5,"prompt_tokens":8,"output_tokens":2}
"#,
        )
        .unwrap();
        let ids: Vec<_> = trace.iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(trace[0].prompt_key, Some(4));
    }

    #[test]
    fn zero_output_names_the_line() {
        let err = native(
            r#"{"id":0,"arrival_step":0,"prompt_tokens":7,"output_tokens":1}
{"id":1,"arrival_step":0,"prompt_tokens":7,"output_tokens":0}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_line() {
        let err = native("{\"id\":0,\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = native(r#"{"id":0,"prompt_tokens":7,"output_tokens":1}"#).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn millisecond_arrivals_are_binned() {
        let trace = native(
            r#"{"id":0,"arrival_ms":1000,"prompt_tokens":7,"output_tokens":1}
{"id":1,"arrival_ms":1059,"prompt_tokens":7,"output_tokens":1}
{"id":2,"arrival_ms":1060,"prompt_tokens":7,"output_tokens":1}
{"id":3,"arrival_ms":1200,"prompt_tokens":7,"output_tokens":1}"#,
        )
        .unwrap();
        let steps: Vec<_> = trace.iter().map(|r| r.arrival_step).collect();
        assert_eq!(steps, vec![0, 0, 1, 3]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(native(
            r#"{"id":0,"arrival_step":0,"prompt_tokens":7,"output_tokens":1}
{"id":0,"arrival_step":1,"prompt_tokens":7,"output_tokens":1}"#
        )
        .is_err());
    }

    #[test]
    fn azure_rows_filtered_and_binned() {
        let csv = "TIMESTAMP,ContextTokens,GeneratedTokens
2024-05-10 00:00:00.000000+00:00,4000,1200
2024-05-10 00:00:00.030000+00:00,300,1000
2024-05-10 00:00:00.130000+00:00,900,1500
";
        let trace =
            parse_azure(csv.as_bytes(), &LoadOptions::for_format(TraceFormat::Azure)).unwrap();
        assert_eq!(trace.len(), 2);
        assert_eq!((trace[0].id, trace[0].arrival_step), (0, 0));
        assert_eq!((trace[1].id, trace[1].arrival_step), (2, 2));

        let all = parse_azure(csv.as_bytes(), &LoadOptions::default()).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn azure_bad_timestamp() {
        let csv = "TIMESTAMP,ContextTokens,GeneratedTokens\nyesterday,4,5\n";
        let err = parse_azure(csv.as_bytes(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn timestamp_formats() {
        assert_eq!(parse_timestamp("1970-01-01T00:00:01.5Z"), Some(1500));
        assert_eq!(parse_timestamp("1970-01-01 00:00:02.25"), Some(2250));
        assert_eq!(parse_timestamp("1970-01-01 01:00:00+01:00"), Some(0));
    }

    #[test]
    fn native_round_trip() {
        let trace = vec![
            Request::new(0, 0, 5, 9).unwrap().with_key(3),
            Request::new(1, 4, 2, 1).unwrap(),
        ];
        let mut buf = Vec::new();
        write_native(&mut buf, &trace).unwrap();
        assert_eq!(
            parse_native(buf.as_slice(), &LoadOptions::default()).unwrap(),
            trace
        );
    }
}
