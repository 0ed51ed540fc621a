//! Tool protocol and per-session environment.
//!
//! Agents reach the market only through [`Session::handle`]. Requests and
//! responses are newline-delimited JSON:
//!
//! ```text
//! {"id":1,"session":"s-0001","method":"trade","params":{"action":"buy","symbol":"AAPL","qty":10}}
//! {"id":1,"result":{...}}
//! {"id":1,"error":{"code":"insufficient_liquidity","message":"..."}}
//! ```
//!
//! Methods: `check_price`, `search`, `news`, `math`, `trade`, `observe`,
//! `stop`. Every method except `stop` spends one unit of the per-decision
//! budget. `stop` closes the current decision point and moves the clock to
//! the next decision time.

pub mod math;
pub mod transport;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::debug;

use crate::datastore::{format_ts, parse_ts, Bar, DataError, DataStore};
use crate::journal::{
    DecisionRecord, EquityPoint, SessionResult, TraceEntry, DECISION_SCHEMA_VERSION,
};
use crate::market::{MarketSpec, CASH_SYMBOL};
use crate::portfolio::{Action, Order, PortfolioState, Rejection};

pub use math::{eval_expr, MathError};

pub const DEFAULT_TOOL_BUDGET: u32 = 20;
pub const DEFAULT_SEARCH_LIMIT: usize = 10;
pub const MAX_RESULT_LIMIT: usize = 100;
pub const MAX_LOOKBACK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    CheckPrice,
    Search,
    News,
    Math,
    Trade,
    Observe,
    Stop,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::CheckPrice,
        Method::Search,
        Method::News,
        Method::Math,
        Method::Trade,
        Method::Observe,
        Method::Stop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CheckPrice => "check_price",
            Method::Search => "search",
            Method::News => "news",
            Method::Math => "math",
            Method::Trade => "trade",
            Method::Observe => "observe",
            Method::Stop => "stop",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub id: u64,
    pub session: String,
    pub method: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolError {
    pub code: String,
    pub message: String,
}

impl ToolError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ToolError {
            code: code.to_string(),
            message: message.into(),
        }
    }
}

impl From<Rejection> for ToolError {
    fn from(r: Rejection) -> Self {
        ToolError::new(r.code(), r.to_string())
    }
}

impl From<MathError> for ToolError {
    fn from(e: MathError) -> Self {
        ToolError::new(e.code(), e.to_string())
    }
}

impl From<DataError> for ToolError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            DataError::UnknownSymbol(_) => "unknown_symbol",
            DataError::NoData { .. } => "no_data",
            DataError::TemporalViolation { .. } => "temporal_violation",
            _ => "invalid_params",
        };
        ToolError::new(code, e.to_string())
    }
}

/// Exactly one of `result` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolError>,
}

impl ToolResponse {
    pub fn ok(id: u64, result: Value) -> Self {
        ToolResponse {
            id,
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: u64, error: ToolError) -> Self {
        ToolResponse {
            id,
            result: None,
            error: Some(error),
        }
    }

    pub fn error_code(&self) -> Option<&str> {
        self.error.as_ref().map(|e| e.code.as_str())
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("responses serialize")
    }
}

/// What an agent sees at the start of a decision point: holdings, the
/// previous period's closes and the current period's executable (open)
/// prices. Symbols without data yet are listed in `gaps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub clock: DateTime<Utc>,
    pub positions: PortfolioState,
    pub previous_close_prices: BTreeMap<String, f64>,
    pub current_buy_prices: BTreeMap<String, f64>,
    pub gaps: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data coverage gap: no {symbol} bar at decision time {ts}")]
    CoverageGap { symbol: String, ts: DateTime<Utc> },
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub spec: Arc<MarketSpec>,
    pub store: Arc<DataStore>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub initial_cash: f64,
    pub tool_budget: u32,
    pub config_digest: String,
}

impl SessionConfig {
    /// Decision times in the window, after checking that the baseline series
    /// covers all of them.
    pub fn schedule(&self) -> Result<Vec<DateTime<Utc>>, SessionError> {
        if self.start >= self.end {
            return Err(SessionError::Config(format!(
                "window start {} is not before end {}",
                self.start, self.end
            )));
        }
        if !(self.initial_cash > 0.0) || !self.initial_cash.is_finite() {
            return Err(SessionError::Config("initial_cash must be positive".into()));
        }
        if self.tool_budget == 0 {
            return Err(SessionError::Config(
                "tool_budget must be at least 1".into(),
            ));
        }
        let baseline = &self.spec.baseline_symbol;
        let (first, last) = match (self.store.first_ts(baseline), self.store.last_ts(baseline)) {
            (Some(f), Some(l)) => (f, l),
            _ => {
                return Err(SessionError::Config(format!(
                    "baseline symbol '{baseline}' has no data in the store"
                )))
            }
        };
        if self.start < first {
            return Err(SessionError::Config(format!(
                "window starts at {} before the first {baseline} bar at {first}",
                self.start
            )));
        }
        let schedule = self.spec.decision_times(self.start, self.end);
        let Some(&final_time) = schedule.last() else {
            return Err(SessionError::Config(
                "window contains no decision times".into(),
            ));
        };
        if final_time > last {
            return Err(SessionError::Config(format!(
                "window runs to {final_time}, after the last {baseline} bar at {last}"
            )));
        }
        if let Some(ts) = schedule
            .iter()
            .find(|t| self.store.bar_at(baseline, **t).is_none())
        {
            return Err(SessionError::CoverageGap {
                symbol: baseline.clone(),
                ts: *ts,
            });
        }
        Ok(schedule)
    }
}

#[derive(Debug, Default)]
struct PendingDecision {
    reasoning: Vec<String>,
    trace: Vec<TraceEntry>,
    fills: Vec<crate::portfolio::Fill>,
    rejections: u32,
    faults: Vec<String>,
}

impl PendingDecision {
    fn is_empty(&self) -> bool {
        self.reasoning.is_empty()
            && self.trace.is_empty()
            && self.fills.is_empty()
            && self.faults.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckPriceParams {
    symbol: String,
    lookback: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchParams {
    query: String,
    limit: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewsParams {
    symbol: Option<String>,
    since: Option<String>,
    limit: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MathParams {
    expr: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TradeParams {
    action: Action,
    symbol: String,
    qty: f64,
}

fn parse_params<T: for<'de> Deserialize<'de>>(params: &Value) -> Result<T, ToolError> {
    let params = if params.is_null() {
        json!({})
    } else {
        params.clone()
    };
    serde_json::from_value(params).map_err(|e| ToolError::new("invalid_params", e.to_string()))
}

fn expect_no_params(params: &Value) -> Result<(), ToolError> {
    match params {
        Value::Null => Ok(()),
        Value::Object(m) if m.is_empty() => Ok(()),
        _ => Err(ToolError::new(
            "invalid_params",
            "this method takes no parameters",
        )),
    }
}

fn limit_param(limit: Option<usize>, default: usize) -> Result<usize, ToolError> {
    match limit.unwrap_or(default) {
        0 => Err(ToolError::new("invalid_params", "limit must be at least 1")),
        n if n > MAX_RESULT_LIMIT => Err(ToolError::new(
            "invalid_params",
            format!("limit must be at most {MAX_RESULT_LIMIT}"),
        )),
        n => Ok(n),
    }
}

fn bar_json(bar: &Bar) -> Value {
    json!({
        "ts": format_ts(&bar.ts),
        "open": bar.open,
        "high": bar.high,
        "low": bar.low,
        "close": bar.close,
        "volume": bar.volume,
    })
}

/// One agent's environment: clock, portfolio, budget and the log of what
/// happened so far. Owned by a single request stream.
pub struct Session {
    token: String,
    cfg: SessionConfig,
    schedule: Vec<DateTime<Utc>>,
    cursor: usize,
    clock: DateTime<Utc>,
    portfolio: PortfolioState,
    remaining: u32,
    last_id: u64,
    done: bool,
    pending: PendingDecision,
    records: Vec<DecisionRecord>,
    equity: Vec<EquityPoint>,
}

impl Session {
    pub fn open(token: impl Into<String>, cfg: SessionConfig) -> Result<Self, SessionError> {
        let schedule = cfg.schedule()?;
        let clock = schedule[0];
        Ok(Session {
            token: token.into(),
            portfolio: PortfolioState::with_cash(cfg.initial_cash),
            remaining: cfg.tool_budget,
            cfg,
            schedule,
            cursor: 0,
            clock,
            last_id: 0,
            done: false,
            pending: PendingDecision::default(),
            records: Vec::new(),
            equity: Vec::new(),
        })
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    pub fn clock(&self) -> DateTime<Utc> {
        self.clock
    }

    pub fn spec(&self) -> &MarketSpec {
        &self.cfg.spec
    }

    pub fn store(&self) -> &DataStore {
        &self.cfg.store
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn portfolio(&self) -> &PortfolioState {
        &self.portfolio
    }

    pub fn remaining_budget(&self) -> u32 {
        self.remaining
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn schedule(&self) -> &[DateTime<Utc>] {
        &self.schedule
    }

    /// Index of the current decision point within the schedule.
    pub fn decision_index(&self) -> usize {
        self.cursor
    }

    pub fn records(&self) -> &[DecisionRecord] {
        &self.records
    }

    /// Tool exchanges of the decision point in progress.
    pub fn current_trace(&self) -> &[TraceEntry] {
        &self.pending.trace
    }

    pub fn next_request_id(&self) -> u64 {
        self.last_id + 1
    }

    /// Builds a request addressed to this session with the next id.
    pub fn request(&self, method: &str, params: Value) -> ToolRequest {
        ToolRequest {
            id: self.next_request_id(),
            session: self.token.clone(),
            method: method.to_string(),
            params,
        }
    }

    pub fn add_reasoning(&mut self, text: impl Into<String>) {
        self.pending.reasoning.push(text.into());
    }

    pub fn record_fault(&mut self, message: impl Into<String>) {
        self.pending.faults.push(message.into());
    }

    pub fn observation(&self) -> Observation {
        let mut previous_close_prices = BTreeMap::new();
        let mut current_buy_prices = BTreeMap::new();
        let mut gaps = Vec::new();
        for symbol in self.cfg.spec.tradable_symbols() {
            let prev = self.cfg.store.price_before(symbol, self.clock).ok();
            let current = self.cfg.store.bar_at(symbol, self.clock);
            if let Some(bar) = prev {
                previous_close_prices.insert(symbol.to_string(), bar.close);
            }
            if let Some(bar) = current {
                current_buy_prices.insert(symbol.to_string(), bar.open);
            }
            if prev.is_none() || current.is_none() {
                gaps.push(symbol.to_string());
            }
        }
        Observation {
            clock: self.clock,
            positions: self.portfolio.clone(),
            previous_close_prices,
            current_buy_prices,
            gaps,
        }
    }

    /// Close of the period that started at the current clock, per held symbol.
    fn closing_prices(&self) -> BTreeMap<String, f64> {
        self.portfolio
            .holdings()
            .keys()
            .map(|s| {
                let bar = self
                    .cfg
                    .store
                    .price_at(s, self.clock)
                    .expect("held symbols were bought against an existing bar");
                (s.clone(), bar.close)
            })
            .collect()
    }

    /// Parses one wire line and handles it. Lines that are not a valid
    /// request get an `invalid_request` error with id 0.
    pub fn handle_line(&mut self, line: &str) -> ToolResponse {
        match serde_json::from_str::<ToolRequest>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => ToolResponse::err(0, ToolError::new("invalid_request", e.to_string())),
        }
    }

    pub fn handle(&mut self, req: &ToolRequest) -> ToolResponse {
        if req.session != self.token {
            return ToolResponse::err(
                req.id,
                ToolError::new("session_not_found", format!("no session '{}'", req.session)),
            );
        }
        if self.done {
            return ToolResponse::err(
                req.id,
                ToolError::new("session_closed", "the run window is exhausted"),
            );
        }
        if req.id == 0 || req.id <= self.last_id {
            let resp = ToolResponse::err(
                req.id,
                ToolError::new(
                    "invalid_request",
                    format!("request id must be positive and above {}", self.last_id),
                ),
            );
            self.push_trace(req, &resp);
            return resp;
        }
        self.last_id = req.id;

        if req.method == Method::Stop.as_str() {
            let resp = match expect_no_params(&req.params) {
                Ok(()) => {
                    let next = self.schedule.get(self.cursor + 1).map(format_ts);
                    ToolResponse::ok(
                        req.id,
                        json!({
                            "closed": format_ts(&self.clock),
                            "fills": self.pending.fills.len(),
                            "next_clock": next,
                            "done": next.is_none(),
                        }),
                    )
                }
                Err(e) => ToolResponse::err(req.id, e),
            };
            self.push_trace(req, &resp);
            if resp.error.is_none() {
                self.end_decision();
            }
            return resp;
        }

        if self.remaining == 0 {
            let resp = ToolResponse::err(
                req.id,
                ToolError::new(
                    "budget_exhausted",
                    format!(
                        "tool budget of {} calls is spent for this decision point",
                        self.cfg.tool_budget
                    ),
                ),
            );
            self.push_trace(req, &resp);
            return resp;
        }
        self.remaining -= 1;

        let outcome = match req.method.parse::<Method>() {
            Ok(method) => self.dispatch(method, &req.params),
            Err(()) => Err(ToolError::new(
                "unknown_method",
                format!("unknown method '{}'", req.method),
            )),
        };
        let resp = match outcome {
            Ok(v) => ToolResponse::ok(req.id, v),
            Err(e) => ToolResponse::err(req.id, e),
        };
        self.push_trace(req, &resp);
        resp
    }

    fn push_trace(&mut self, req: &ToolRequest, resp: &ToolResponse) {
        self.pending.trace.push(TraceEntry {
            request: req.clone(),
            response: resp.clone(),
        });
    }

    fn dispatch(&mut self, method: Method, params: &Value) -> Result<Value, ToolError> {
        match method {
            Method::CheckPrice => self.check_price(parse_params(params)?),
            Method::Search => {
                let p: SearchParams = parse_params(params)?;
                let limit = limit_param(p.limit, DEFAULT_SEARCH_LIMIT)?;
                let docs = self.cfg.store.search_docs(&p.query, self.clock, limit)?;
                Ok(json!({ "documents": docs }))
            }
            Method::News => {
                let p: NewsParams = parse_params(params)?;
                let limit = limit_param(p.limit, DEFAULT_SEARCH_LIMIT)?;
                if let Some(sym) = &p.symbol {
                    self.require_universe(sym)?;
                }
                let since = p
                    .since
                    .as_deref()
                    .map(parse_ts)
                    .transpose()
                    .map_err(|e| ToolError::new("invalid_params", e))?;
                let items =
                    self.cfg
                        .store
                        .news_query(p.symbol.as_deref(), since, self.clock, limit)?;
                Ok(json!({ "items": items }))
            }
            Method::Math => {
                let p: MathParams = parse_params(params)?;
                Ok(json!({ "value": eval_expr(&p.expr)? }))
            }
            Method::Trade => self.trade(parse_params(params)?),
            Method::Observe => {
                expect_no_params(params)?;
                Ok(serde_json::to_value(self.observation()).expect("observation serializes"))
            }
            Method::Stop => unreachable!("stop is handled before dispatch"),
        }
    }

    fn require_universe(&self, symbol: &str) -> Result<(), ToolError> {
        if symbol == CASH_SYMBOL || self.cfg.spec.instrument(symbol).is_none() {
            return Err(Rejection::UnknownSymbol(symbol.to_string()).into());
        }
        Ok(())
    }

    /// Completed bars (opened before the clock) plus the open of the period
    /// starting at the clock. The current period's high, low and close are
    /// not yet known at a decision instant and are never returned.
    fn check_price(&self, p: CheckPriceParams) -> Result<Value, ToolError> {
        self.require_universe(&p.symbol)?;
        let lookback = p.lookback.unwrap_or(1);
        if lookback == 0 || lookback > MAX_LOOKBACK {
            return Err(ToolError::new(
                "invalid_params",
                format!("lookback must be between 1 and {MAX_LOOKBACK}"),
            ));
        }
        let store = &self.cfg.store;
        let bars = store.bars_before(&p.symbol, self.clock, lookback)?;
        let current = store.bar_at(&p.symbol, self.clock);
        if bars.is_empty() && current.is_none() {
            return Err(DataError::NoData {
                symbol: p.symbol,
                t_now: self.clock,
            }
            .into());
        }
        Ok(json!({
            "symbol": p.symbol,
            "clock": format_ts(&self.clock),
            "bars": bars.iter().map(bar_json).collect::<Vec<_>>(),
            "current": current.map(|b| json!({"ts": format_ts(&b.ts), "open": b.open})),
        }))
    }

    /// Price at which an order placed now executes: the open of the period
    /// starting at the clock.
    pub fn execution_price(&self, symbol: &str) -> Result<f64, Rejection> {
        self.cfg
            .store
            .bar_at(symbol, self.clock)
            .map(|b| b.open)
            .ok_or_else(|| Rejection::NoPrice {
                symbol: symbol.to_string(),
                ts: self.clock,
            })
    }

    fn trade(&mut self, p: TradeParams) -> Result<Value, ToolError> {
        let order = Order {
            action: p.action,
            symbol: p.symbol,
            qty: p.qty,
        };
        let result = self.place(&order);
        match result {
            Ok(fill) => Ok(json!({
                "fill": fill,
                "positions": self.portfolio,
            })),
            Err(rej) => {
                self.pending.rejections += 1;
                debug!(session = %self.token, code = rej.code(), "order rejected");
                Err(rej.into())
            }
        }
    }

    fn place(&mut self, order: &Order) -> Result<crate::portfolio::Fill, Rejection> {
        if order.symbol == CASH_SYMBOL {
            return Err(Rejection::CashNotTradable);
        }
        if self.cfg.spec.instrument(&order.symbol).is_none() {
            return Err(Rejection::UnknownSymbol(order.symbol.clone()));
        }
        let price = self.execution_price(&order.symbol)?;
        let (next, fill) = self
            .portfolio
            .execute(order, price, self.clock, &self.cfg.spec)?;
        self.portfolio = next;
        self.pending.fills.push(fill.clone());
        Ok(fill)
    }

    /// Closes the decision point in progress: writes its record, marks the
    /// equity curve at the period close, and advances to the next decision
    /// time (or finishes the session).
    pub fn end_decision(&mut self) -> Option<&DecisionRecord> {
        if self.done {
            return None;
        }
        let closes = self.closing_prices();
        let end_valuation = self
            .portfolio
            .valuation(&closes)
            .expect("closing prices cover every holding");
        let pending = std::mem::take(&mut self.pending);
        self.records.push(DecisionRecord {
            v: DECISION_SCHEMA_VERSION,
            clock: self.clock,
            reasoning: pending.reasoning,
            tool_trace: pending.trace,
            fills: pending.fills,
            rejections: pending.rejections,
            faults: pending.faults,
            end_positions: self.portfolio.clone(),
            end_valuation,
            recorded_at: Utc::now().to_rfc3339(),
        });
        self.equity.push(EquityPoint {
            ts: self.clock,
            valuation: end_valuation,
        });
        match self.schedule.get(self.cursor + 1).copied() {
            Some(next) => {
                self.advance_clock(next)
                    .expect("next scheduled time is a valid advance");
            }
            None => self.done = true,
        }
        self.records.last()
    }

    /// Moves the clock forward to a later decision time inside the window and
    /// refills the budget. Fails if a decision point is still open.
    pub fn advance_clock(&mut self, to: DateTime<Utc>) -> Result<(), ToolError> {
        if self.done {
            return Err(ToolError::new(
                "session_closed",
                "the run window is exhausted",
            ));
        }
        if to <= self.clock {
            return Err(ToolError::new(
                "clock_regression",
                format!("cannot move the clock from {} to {to}", self.clock),
            ));
        }
        if !self.pending.is_empty() {
            return Err(ToolError::new(
                "decision_open",
                "close the current decision point before advancing",
            ));
        }
        let idx = match self.schedule.binary_search(&to) {
            Ok(i) if self.cfg.spec.is_decision_time(to) => i,
            _ => {
                return Err(ToolError::new(
                    "not_a_decision_time",
                    format!("{to} is not a decision time in this run window"),
                ))
            }
        };
        self.cursor = idx;
        self.clock = to;
        self.remaining = self.cfg.tool_budget;
        Ok(())
    }

    pub fn finish(self) -> SessionResult {
        SessionResult {
            records: self.records,
            equity_curve: self.equity,
            config_digest: self.cfg.config_digest,
        }
    }
}
