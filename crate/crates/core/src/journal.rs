//! Decision log and equity curve persistence.
//!
//! Layout of one run directory:
//!
//! ```text
//! <run_id>/decisions.jsonl   one DecisionRecord per line
//! <run_id>/equity.csv        ts,valuation
//! <run_id>/config.json       resolved run configuration
//! <run_id>/report.json       metrics as printed at run time
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datastore::{format_ts, parse_ts};
use crate::portfolio::{Fill, PortfolioState};
use crate::toolserver::{ToolRequest, ToolResponse};

pub const DECISION_SCHEMA_VERSION: u32 = 1;
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const EQUITY_FILE: &str = "equity.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";

/// Name of the per-record wall-clock field; excluded from replay digests.
pub const WALL_CLOCK_FIELD: &str = "recorded_at";

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path, e: impl ToString) -> JournalError {
    JournalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub request: ToolRequest,
    pub response: ToolResponse,
}

/// Everything that happened at one decision point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub v: u32,
    pub clock: DateTime<Utc>,
    pub reasoning: Vec<String>,
    pub tool_trace: Vec<TraceEntry>,
    pub fills: Vec<Fill>,
    pub rejections: u32,
    #[serde(default)]
    pub faults: Vec<String>,
    pub end_positions: PortfolioState,
    pub end_valuation: f64,
    pub recorded_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub ts: DateTime<Utc>,
    pub valuation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionResult {
    pub records: Vec<DecisionRecord>,
    pub equity_curve: Vec<EquityPoint>,
    pub config_digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes records as JSON lines.
pub fn render_decisions(records: &[DecisionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Digest of a decisions.jsonl body with the wall-clock field removed from
/// every record.
pub fn decisions_digest(jsonl: &str) -> Result<String, serde_json::Error> {
    let mut hasher = Sha256::new();
    for line in jsonl.lines().filter(|l| !l.trim().is_empty()) {
        let mut value: Value = serde_json::from_str(line)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove(WALL_CLOCK_FIELD);
        }
        hasher.update(serde_json::to_string(&value)?.as_bytes());
        hasher.update(b"\n");
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn render_equity(curve: &[EquityPoint]) -> String {
    let mut out = String::from("ts,valuation\n");
    for p in curve {
        // `{}` on f64 prints the shortest string that round-trips
        out.push_str(&format!("{},{}\n", format_ts(&p.ts), p.valuation));
    }
    out
}

pub fn write_run_dir(
    dir: &Path,
    result: &SessionResult,
    config: &Value,
) -> Result<(), JournalError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let p = dir.join(DECISIONS_FILE);
    let file = File::create(&p).map_err(|e| io_err(&p, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(render_decisions(&result.records).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&p, e))?;

    let p = dir.join(EQUITY_FILE);
    fs::write(&p, render_equity(&result.equity_curve)).map_err(|e| io_err(&p, e))?;

    let p = dir.join(CONFIG_FILE);
    let text = serde_json::to_string_pretty(config).map_err(|e| io_err(&p, e))?;
    fs::write(&p, text + "\n").map_err(|e| io_err(&p, e))?;
    Ok(())
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>, JournalError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DecisionRecord =
            serde_json::from_str(&line).map_err(|e| JournalError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if record.v != DECISION_SCHEMA_VERSION {
            return Err(JournalError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("unsupported schema version {}", record.v),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_equity(path: &Path) -> Result<Vec<EquityPoint>, JournalError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let corrupt = |line: usize, message: String| JournalError::Corrupt {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "ts,valuation")) => {}
        _ => return Err(corrupt(1, "missing 'ts,valuation' header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (ts, val) = line
            .split_once(',')
            .ok_or_else(|| corrupt(i + 1, "expected two columns".into()))?;
        let ts = parse_ts(ts).map_err(|e| corrupt(i + 1, e))?;
        let valuation: f64 = val
            .trim()
            .parse()
            .map_err(|_| corrupt(i + 1, format!("bad valuation '{val}'")))?;
        out.push(EquityPoint { ts, valuation });
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<Value, JournalError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| JournalError::Corrupt {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}
