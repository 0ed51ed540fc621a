//! Run configuration and batch execution of scripted policies.
//!
//! ```json
//! {
//!   "run_id": "bh-us",
//!   "market": "us",
//!   "universe_file": "universe.txt",
//!   "bars_path": "bars_daily.csv",
//!   "news_path": "corpus.jsonl",
//!   "window": {"start": "2025-10-01T00:00:00Z", "end": "2025-11-11T23:59:59Z"},
//!   "initial_cash": 100000,
//!   "policy": {"kind": "buy_and_hold"}
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::agent::{make_scripted_policy, run_session, AgentError, PolicyKind};
use crate::datastore::{ColumnMapping, DataError, DataStore, StoreBuilder};
use crate::journal::{self, EquityPoint, JournalError, SessionResult, REPORT_FILE};
use crate::market::{
    load_market_spec, Frequency, MarketError, MarketId, MarketSpec, TradingCalendar,
};
use crate::metrics::{build_report, MetricsError, RunReport};
use crate::toolserver::{Session, SessionConfig, SessionError, DEFAULT_TOOL_BUDGET};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {message}")]
    MissingFile { path: PathBuf, message: String },
    #[error("invalid run config: {0}")]
    Config(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

fn default_frequency() -> Frequency {
    Frequency::Daily
}

fn default_budget() -> u32 {
    DEFAULT_TOOL_BUDGET
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub market: MarketId,
    pub universe_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calendar_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bars_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub news_path: Option<PathBuf>,
    pub window: Window,
    #[serde(default = "default_frequency")]
    pub frequency: Frequency,
    pub initial_cash: f64,
    pub policy: PolicyKind,
    #[serde(default = "default_budget")]
    pub tool_budget: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_symbol: Option<String>,
    #[serde(default)]
    pub fee_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods_per_year: Option<f64>,
}

/// What a run directory's `config.json` holds: the config with absolute
/// paths, its digest and the digest of the market data it ran against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub config_digest: String,
    pub data_digest: String,
}

fn missing(path: &Path, e: impl ToString) -> RunError {
    RunError::MissingFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| missing(path, e))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.universe_file);
        self.calendar_file.as_mut().map(fix);
        self.bars_path.as_mut().map(fix);
        self.news_path.as_mut().map(fix);
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if self.run_id.is_empty()
            || !self
                .run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return bad("run_id must be non-empty and use only letters, digits, '-', '_' or '.'");
        }
        if self.window.start >= self.window.end {
            return bad("window.start must be before window.end");
        }
        if !(self.initial_cash > 0.0) || !self.initial_cash.is_finite() {
            return bad("initial_cash must be positive");
        }
        if self.tool_budget == 0 {
            return bad("tool_budget must be at least 1");
        }
        if !(self.fee_rate >= 0.0) || self.fee_rate >= 1.0 {
            return bad("fee_rate must be in [0, 1)");
        }
        if self
            .periods_per_year
            .is_some_and(|p| !(p > 0.0) || !p.is_finite())
        {
            return bad("periods_per_year must be positive");
        }
        Ok(())
    }

    pub fn market_spec(&self) -> Result<MarketSpec, RunError> {
        let mut spec = load_market_spec(self.market, &self.universe_file)?
            .with_frequency(self.frequency)
            .with_fee_rate(self.fee_rate);
        if let Some(path) = &self.calendar_file {
            if !path.exists() {
                return Err(missing(path, "calendar file not found"));
            }
            spec = spec.with_calendar(TradingCalendar::load(path)?);
        }
        if let Some(b) = &self.baseline_symbol {
            spec = spec.with_baseline(b.clone());
        }
        if let Some(p) = self.periods_per_year {
            spec = spec.with_periods_per_year(p);
        }
        Ok(spec)
    }

    /// Ingests `bars_path` and `news_path`.
    pub fn build_store(&self) -> Result<DataStore, RunError> {
        let Some(bars) = &self.bars_path else {
            return Err(RunError::Config(
                "no bars_path in the config and no store image given".into(),
            ));
        };
        if !bars.exists() {
            return Err(missing(bars, "bars file not found"));
        }
        let mut b = StoreBuilder::new();
        b.ingest_bars(bars, &ColumnMapping::default())?;
        if let Some(news) = &self.news_path {
            if !news.exists() {
                return Err(missing(news, "news file not found"));
            }
            b.ingest_corpus(news)?;
        }
        Ok(b.freeze())
    }

    /// Digest of the canonical JSON form of this config together with the
    /// data digest.
    pub fn digest(&self, data_digest: &str) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let text = serde_json::to_string(&value).expect("config serializes");
        journal::sha256_hex(format!("{text}\n{data_digest}").as_bytes())
    }

    pub fn session_config(&self, spec: MarketSpec, store: Arc<DataStore>) -> SessionConfig {
        let data_digest = store.content_digest();
        SessionConfig {
            spec: Arc::new(spec),
            store,
            start: self.window.start,
            end: self.window.end,
            initial_cash: self.initial_cash,
            tool_budget: self.tool_budget,
            config_digest: self.digest(&data_digest),
        }
    }
}

/// Closes of the baseline symbol at each point of `curve`, valued as one unit.
pub fn baseline_curve(
    store: &DataStore,
    symbol: &str,
    curve: &[EquityPoint],
) -> Result<Vec<EquityPoint>, DataError> {
    curve
        .iter()
        .map(|p| {
            store.price_at(symbol, p.ts).map(|bar| EquityPoint {
                ts: p.ts,
                valuation: bar.close,
            })
        })
        .collect()
}

pub fn compute_report(
    cfg: &RunConfig,
    spec: &MarketSpec,
    store: &DataStore,
    result: &SessionResult,
) -> Result<RunReport, RunError> {
    let baseline = baseline_curve(store, &spec.baseline_symbol, &result.equity_curve)?;
    let (metrics, baseline_report) = build_report(
        &result.equity_curve,
        &result.records,
        spec.periods_per_year(),
        Some((&spec.baseline_symbol, &baseline)),
    )?;
    Ok(RunReport {
        run_id: cfg.run_id.clone(),
        market: cfg.market.as_str().to_string(),
        start: cfg.window.start,
        end: cfg.window.end,
        metrics,
        baseline: baseline_report,
    })
}

/// Writes `decisions.jsonl`, `equity.csv` and `config.json` to `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &RunConfig,
    store: &DataStore,
    result: &SessionResult,
) -> Result<(), RunError> {
    let resolved = ResolvedRun {
        config: cfg.clone(),
        config_digest: result.config_digest.clone(),
        data_digest: store.content_digest(),
    };
    let value = serde_json::to_value(&resolved).expect("config serializes");
    journal::write_run_dir(dir, result, &value)?;
    Ok(())
}

pub fn write_report(dir: &Path, report: &RunReport) -> Result<(), RunError> {
    let path = dir.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&path, text + "\n").map_err(|e| {
        RunError::Journal(JournalError::Io {
            path: path.clone(),
            message: e.to_string(),
        })
    })
}

pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub result: SessionResult,
    pub report: Option<RunReport>,
}

/// Runs a scripted policy over the whole window and writes
/// `<out>/<run_id>/`. The report is skipped (with `report: None`) only when
/// the window is too short to score.
pub fn execute_run(
    cfg: &RunConfig,
    store: Arc<DataStore>,
    out: &Path,
) -> Result<RunOutcome, RunError> {
    let spec = cfg.market_spec()?;
    let mut policy = make_scripted_policy(&cfg.policy, &spec, cfg.seed)?;
    let session_cfg = cfg.session_config(spec.clone(), Arc::clone(&store));
    let session = Session::open(cfg.run_id.clone(), session_cfg)?;
    info!(
        run_id = %cfg.run_id,
        policy = cfg.policy.name(),
        decisions = session.schedule().len(),
        "run started"
    );
    let result = run_session(session, policy.as_mut());
    let run_dir = out.join(&cfg.run_id);
    write_run(&run_dir, cfg, &store, &result)?;
    let report = match compute_report(cfg, &spec, &store, &result) {
        Ok(r) => {
            write_report(&run_dir, &r)?;
            Some(r)
        }
        Err(RunError::Metrics(MetricsError::TooShort { .. })) => None,
        Err(e) => return Err(e),
    };
    info!(run_id = %cfg.run_id, dir = %run_dir.display(), "run finished");
    Ok(RunOutcome {
        run_dir,
        result,
        report,
    })
}
