//! Offline verification of a run directory.
//!
//! The decision log is replayed against the market data: every fill must sit
//! at the open of its decision period, positions must follow from the fills,
//! and each equity point must equal the end-of-period valuation recomputed
//! from the stored closes. Metrics are then recomputed and compared with
//! `report.json`.

use std::path::{Path, PathBuf};

use serde_json::Value;
use thiserror::Error;

use crate::datastore::DataStore;
use crate::journal::{
    self, JournalError, SessionResult, CONFIG_FILE, DECISIONS_FILE, EQUITY_FILE, REPORT_FILE,
};
use crate::market::{MarketSpec, CASH_SYMBOL};
use crate::metrics::RunReport;
use crate::portfolio::{Fill, PortfolioState};
use crate::runner::{compute_report, ResolvedRun, RunError};

/// Agreement required between logged and recomputed valuations, relative to
/// `max(1, |value|)`.
pub const VALUATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {message}")]
    Integrity { path: PathBuf, message: String },
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUATION_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Loads a run directory and checks it against `store` (or, when `None`,
/// against the data files named in the run's config).
pub fn verify_run(dir: &Path, store: Option<&DataStore>) -> Result<RunReport, ReportError> {
    let config_path = dir.join(CONFIG_FILE);
    let resolved: ResolvedRun = serde_json::from_value(journal::read_config(&config_path)?)
        .map_err(|e| JournalError::Corrupt {
            path: config_path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
    let cfg = &resolved.config;
    let owned;
    let store = match store {
        Some(s) => s,
        None => {
            owned = cfg.build_store()?;
            &owned
        }
    };
    let integrity = |path: &Path, message: String| ReportError::Integrity {
        path: path.to_path_buf(),
        message,
    };
    let data_digest = store.content_digest();
    if data_digest != resolved.data_digest {
        return Err(integrity(
            &config_path,
            "market data differs from the data the run used".into(),
        ));
    }
    if cfg.digest(&data_digest) != resolved.config_digest {
        return Err(integrity(
            &config_path,
            "config digest does not match its contents".into(),
        ));
    }

    let decisions_path = dir.join(DECISIONS_FILE);
    let equity_path = dir.join(EQUITY_FILE);
    let records = journal::read_decisions(&decisions_path)?;
    let equity = journal::read_equity(&equity_path)?;
    if records.len() != equity.len() {
        return Err(integrity(
            &equity_path,
            format!(
                "{} equity points for {} decisions",
                equity.len(),
                records.len()
            ),
        ));
    }
    let spec = cfg.market_spec()?;
    let schedule = spec.decision_times(cfg.window.start, cfg.window.end);
    if records.len() > schedule.len() {
        return Err(integrity(
            &decisions_path,
            format!(
                "{} decisions but the window has {}",
                records.len(),
                schedule.len()
            ),
        ));
    }

    let mut portfolio = PortfolioState::with_cash(cfg.initial_cash);
    for (i, (record, point)) in records.iter().zip(&equity).enumerate() {
        let line = i + 1;
        let fail = |path: &Path, m: String| integrity(path, format!("decision {line}: {m}"));
        if record.clock != schedule[i] {
            return Err(fail(
                &decisions_path,
                format!(
                    "clock {} is not decision time {}",
                    record.clock, schedule[i]
                ),
            ));
        }
        if point.ts != record.clock {
            return Err(fail(
                &equity_path,
                format!("timestamp {} != {}", point.ts, record.clock),
            ));
        }
        portfolio =
            replay_fills(&portfolio, record, &spec, store).map_err(|m| fail(&decisions_path, m))?;
        if portfolio != record.end_positions {
            return Err(fail(
                &decisions_path,
                "end positions do not follow from the fills".into(),
            ));
        }
        let value =
            mark_at_close(&portfolio, record.clock, store).map_err(|m| fail(&decisions_path, m))?;
        if !close(value, record.end_valuation) {
            return Err(fail(
                &decisions_path,
                format!(
                    "logged valuation {} != recomputed {value}",
                    record.end_valuation
                ),
            ));
        }
        if !close(value, point.valuation) {
            return Err(fail(
                &equity_path,
                format!("equity {} != recomputed {value}", point.valuation),
            ));
        }
    }

    let result = SessionResult {
        records,
        equity_curve: equity,
        config_digest: resolved.config_digest.clone(),
    };
    let report = compute_report(cfg, &spec, store, &result)?;

    let report_path = dir.join(REPORT_FILE);
    if report_path.exists() {
        let stored = journal::read_config(&report_path)?;
        let fresh = serde_json::to_value(&report).expect("report serializes");
        if let Some(field) = first_difference(&stored, &fresh, "") {
            return Err(integrity(
                &report_path,
                format!("stored report disagrees with recomputation at '{field}'"),
            ));
        }
    }
    Ok(report)
}

fn replay_fills(
    start: &PortfolioState,
    record: &journal::DecisionRecord,
    spec: &MarketSpec,
    store: &DataStore,
) -> Result<PortfolioState, String> {
    let traced: Vec<Fill> = record
        .tool_trace
        .iter()
        .filter_map(|e| e.response.result.as_ref()?.get("fill"))
        .map(|f| {
            serde_json::from_value(f.clone()).map_err(|e| format!("unreadable traced fill: {e}"))
        })
        .collect::<Result<_, _>>()?;
    if traced != record.fills {
        return Err("tool trace disagrees with the recorded fills".into());
    }
    let mut state = start.clone();
    for fill in &record.fills {
        if fill.ts != record.clock {
            return Err(format!("fill at {} outside its decision period", fill.ts));
        }
        let open = store
            .bar_at(&fill.order.symbol, record.clock)
            .map(|b| b.open)
            .ok_or_else(|| format!("no {} bar at {}", fill.order.symbol, record.clock))?;
        if fill.price != open {
            return Err(format!(
                "{} filled at {} but the period opened at {open}",
                fill.order.symbol, fill.price
            ));
        }
        let (next, replayed) = state
            .execute(&fill.order, open, record.clock, spec)
            .map_err(|r| format!("logged fill would be rejected: {r}"))?;
        if replayed != *fill {
            return Err(format!(
                "fill for {} does not match its replay",
                fill.order.symbol
            ));
        }
        state = next;
    }
    Ok(state)
}

fn mark_at_close(
    state: &PortfolioState,
    clock: chrono::DateTime<chrono::Utc>,
    store: &DataStore,
) -> Result<f64, String> {
    let mut prices = std::collections::BTreeMap::new();
    for symbol in state.holdings().keys() {
        debug_assert_ne!(symbol, CASH_SYMBOL);
        let bar = store.price_at(symbol, clock).map_err(|e| e.to_string())?;
        prices.insert(symbol.clone(), bar.close);
    }
    state.valuation(&prices).map_err(|e| e.to_string())
}

/// Path of the first value that differs, with numbers compared at the
/// valuation tolerance.
fn first_difference(a: &Value, b: &Value, path: &str) -> Option<String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64()?, y.as_f64()?);
            (!close(x, y)).then(|| path.to_string())
        }
        (Value::Object(x), Value::Object(y)) => {
            if x.len() != y.len() || x.keys().any(|k| !y.contains_key(k)) {
                return Some(path.to_string());
            }
            x.iter()
                .find_map(|(k, v)| first_difference(v, &y[k], &format!("{path}/{k}")))
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Some(path.to_string());
            }
            x.iter()
                .zip(y)
                .enumerate()
                .find_map(|(i, (v, w))| first_difference(v, w, &format!("{path}/{i}")))
        }
        _ => (a != b).then(|| path.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{execute_run, RunConfig};
    use std::fs;
    use std::sync::Arc;

    const BARS: &str = "symbol,ts,open,high,low,close,volume
QQQ,2025-09-30T14:30:00Z,100,101,99,100,10
QQQ,2025-10-01T14:30:00Z,100,102,99,101,10
QQQ,2025-10-02T14:30:00Z,101,103,100,102,10
QQQ,2025-10-03T14:30:00Z,102,104,98,99,10
AAPL,2025-09-30T14:30:00Z,50,51,49,50,10
AAPL,2025-10-01T14:30:00Z,50,52,49,51,10
AAPL,2025-10-02T14:30:00Z,51,53,50,52,10
AAPL,2025-10-03T14:30:00Z,52,54,49,50,10
";

    fn run() -> (tempfile::TempDir, PathBuf, DataStore) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("u.txt"), "QQQ\nAAPL\n").unwrap();
        fs::write(dir.path().join("bars.csv"), BARS).unwrap();
        let cfg_path = dir.path().join("run.json");
        fs::write(
            &cfg_path,
            r#"{"run_id":"r","market":"us","universe_file":"u.txt","bars_path":"bars.csv",
                "window":{"start":"2025-10-01T00:00:00Z","end":"2025-10-03T23:00:00Z"},
                "initial_cash":1000,"policy":{"kind":"random"},"seed":3}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&cfg_path).unwrap();
        let store = cfg.build_store().unwrap();
        let out = execute_run(
            &cfg,
            Arc::new(cfg.build_store().unwrap()),
            &dir.path().join("runs"),
        )
        .unwrap();
        (dir, out.run_dir, store)
    }

    #[test]
    fn clean_run_verifies() {
        let (_d, run_dir, store) = run();
        let stored: RunReport =
            serde_json::from_str(&fs::read_to_string(run_dir.join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(verify_run(&run_dir, Some(&store)).unwrap(), stored);
        assert_eq!(verify_run(&run_dir, None).unwrap(), stored);
    }

    #[test]
    fn tampered_equity_detected() {
        let (_d, run_dir, store) = run();
        let p = run_dir.join(EQUITY_FILE);
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let (ts, v) = lines[2].split_once(',').unwrap();
        let bumped = v.parse::<f64>().unwrap() + 0.01;
        lines[2] = format!("{ts},{bumped}");
        fs::write(&p, lines.join("\n") + "\n").unwrap();
        assert!(matches!(
            verify_run(&run_dir, Some(&store)),
            Err(ReportError::Integrity { .. })
        ));
    }

    #[test]
    fn tampered_report_detected() {
        let (_d, run_dir, store) = run();
        let p = run_dir.join(REPORT_FILE);
        let mut v: Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        v["metrics"]["cr"] = Value::from(99.0);
        fs::write(&p, v.to_string()).unwrap();
        assert!(matches!(
            verify_run(&run_dir, Some(&store)),
            Err(ReportError::Integrity { .. })
        ));
    }

    #[test]
    fn tampered_trace_fill_detected() {
        let (_d, run_dir, store) = run();
        let p = run_dir.join(DECISIONS_FILE);
        let mut lines: Vec<Value> = fs::read_to_string(&p)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let fill = lines
            .iter_mut()
            .flat_map(|r| r["tool_trace"].as_array_mut().unwrap().iter_mut())
            .find_map(|e| e["response"]["result"].get_mut("fill"))
            .expect("the run trades");
        fill["price"] = Value::from(fill["price"].as_f64().unwrap() - 1.0);
        let text: String = lines.iter().map(|v| v.to_string() + "\n").collect();
        fs::write(&p, text).unwrap();
        assert!(matches!(
            verify_run(&run_dir, Some(&store)),
            Err(ReportError::Integrity { .. })
        ));
    }

    #[test]
    fn truncated_log_detected() {
        let (_d, run_dir, store) = run();
        let p = run_dir.join(DECISIONS_FILE);
        let text = fs::read_to_string(&p).unwrap();
        let first = text.lines().next().unwrap();
        fs::write(&p, &first[..first.len() / 2]).unwrap();
        assert!(matches!(
            verify_run(&run_dir, Some(&store)),
            Err(ReportError::Journal(JournalError::Corrupt { .. }))
        ));
    }

    #[test]
    fn different_data_detected() {
        let (_d, run_dir, _store) = run();
        let mut b = crate::datastore::StoreBuilder::new();
        b.ingest_bars_from_reader(
            BARS.replace("102,104,98,99", "102,104,98,98").as_bytes(),
            &Default::default(),
        )
        .unwrap();
        assert!(matches!(
            verify_run(&run_dir, Some(&b.freeze())),
            Err(ReportError::Integrity { .. })
        ));
    }
}
