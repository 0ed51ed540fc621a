//! Agent runtime and scripted policies.
//!
//! A [`Policy`] is asked for one [`Step`] at a time. The runtime turns each
//! step into a tool request against the [`Session`], so scripted policies and
//! language-model agents go through the same protocol and the same budget.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::debug;

use crate::journal::{SessionResult, TraceEntry};
use crate::market::MarketSpec;
use crate::portfolio::{Action, Order};
use crate::toolserver::{Method, Observation, Session, ToolRequest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("invalid policy parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Call {
        method: String,
        params: Value,
        reasoning: Option<String>,
    },
    Stop {
        reasoning: Option<String>,
    },
    /// The policy could not produce a usable step (bad model output, lost
    /// connection). The decision point ends as a hold.
    Fault(String),
}

pub struct PolicyInput<'a> {
    pub spec: &'a MarketSpec,
    pub observation: &'a Observation,
    /// Exchanges so far in this decision point.
    pub transcript: &'a [TraceEntry],
    pub decision_index: usize,
    pub remaining_budget: u32,
}

pub trait Policy {
    fn next_step(&mut self, input: &PolicyInput<'_>) -> Step;
}

/// How one decision point ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionEnd {
    Stopped,
    BudgetExhausted,
    Fault,
}

/// Drives one decision point: at most `tool_budget + 1` policy steps, after
/// which the decision is closed regardless.
pub fn run_decision_point(session: &mut Session, policy: &mut dyn Policy) -> DecisionEnd {
    let max_steps = session.config().tool_budget as usize + 1;
    for _ in 0..max_steps {
        if session.is_done() {
            return DecisionEnd::Stopped;
        }
        let observation = session.observation();
        let step = {
            let input = PolicyInput {
                spec: session.spec(),
                observation: &observation,
                transcript: session.current_trace(),
                decision_index: session.decision_index(),
                remaining_budget: session.remaining_budget(),
            };
            policy.next_step(&input)
        };
        match step {
            Step::Stop { reasoning } => {
                if let Some(r) = reasoning {
                    session.add_reasoning(r);
                }
                let req = session.request(Method::Stop.as_str(), json!({}));
                let resp = session.handle(&req);
                if resp.error.is_none() {
                    return DecisionEnd::Stopped;
                }
            }
            Step::Call {
                method,
                params,
                reasoning,
            } => {
                if let Some(r) = reasoning {
                    session.add_reasoning(r);
                }
                if method.parse::<Method>().is_err() {
                    session.record_fault(format!("policy requested unknown method '{method}'"));
                    session.end_decision();
                    return DecisionEnd::Fault;
                }
                let req = session.request(&method, params);
                let resp = session.handle(&req);
                if method == Method::Stop.as_str() && resp.error.is_none() {
                    return DecisionEnd::Stopped;
                }
                if resp.error_code() == Some("budget_exhausted") {
                    session.end_decision();
                    return DecisionEnd::BudgetExhausted;
                }
            }
            Step::Fault(message) => {
                debug!(session = session.token(), %message, "policy fault");
                session.record_fault(message);
                session.end_decision();
                return DecisionEnd::Fault;
            }
        }
    }
    session.record_fault("policy did not stop within the step limit");
    session.end_decision();
    DecisionEnd::Fault
}

/// Runs every remaining decision point and returns the session log.
pub fn run_session(mut session: Session, policy: &mut dyn Policy) -> SessionResult {
    while !session.is_done() {
        run_decision_point(&mut session, policy);
    }
    session.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyKind {
    /// Spends all cash on the first decision, then holds.
    BuyAndHold {
        #[serde(default)]
        symbols: Option<Vec<String>>,
    },
    /// Equal value in each symbol, rebalanced every `rebalance_every` decisions.
    EqualWeight {
        #[serde(default)]
        symbols: Option<Vec<String>>,
        #[serde(default = "default_rebalance")]
        rebalance_every: usize,
    },
    /// Seeded random trades, used for replay and accounting checks. Without
    /// a seed the run seed is used.
    Random {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Holds the `top_k` symbols with the best trailing return.
    Momentum {
        #[serde(default = "default_lookback")]
        lookback: usize,
        #[serde(default = "default_top_k")]
        top_k: usize,
    },
    /// An external agent connected through the tool server.
    Remote,
}

fn default_rebalance() -> usize {
    5
}

fn default_lookback() -> usize {
    5
}

fn default_top_k() -> usize {
    3
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::BuyAndHold { .. } => "buy_and_hold",
            PolicyKind::EqualWeight { .. } => "equal_weight",
            PolicyKind::Random { .. } => "random",
            PolicyKind::Momentum { .. } => "momentum",
            PolicyKind::Remote => "remote",
        }
    }

    /// Parses `buy_and_hold`, `equal_weight`, `momentum`, `random` or
    /// `random:<seed>`.
    pub fn from_cli(s: &str) -> Result<Self, AgentError> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("buy_and_hold", None) => Ok(PolicyKind::BuyAndHold { symbols: None }),
            ("equal_weight", None) => Ok(PolicyKind::EqualWeight {
                symbols: None,
                rebalance_every: default_rebalance(),
            }),
            ("momentum", None) => Ok(PolicyKind::Momentum {
                lookback: default_lookback(),
                top_k: default_top_k(),
            }),
            ("random", None) => Ok(PolicyKind::Random { seed: None }),
            ("random", Some(seed)) => seed
                .parse()
                .map(|seed| PolicyKind::Random { seed: Some(seed) })
                .map_err(|_| AgentError::InvalidParams(format!("bad seed '{seed}'"))),
            ("remote", None) => Ok(PolicyKind::Remote),
            _ => Err(AgentError::InvalidParams(format!("unknown policy '{s}'"))),
        }
    }
}

/// Builds a scripted policy. `run_seed` seeds random policies that do not
/// carry their own seed.
pub fn make_scripted_policy(
    kind: &PolicyKind,
    spec: &MarketSpec,
    run_seed: u64,
) -> Result<Box<dyn Policy + Send>, AgentError> {
    let check_symbols = |symbols: &Option<Vec<String>>| -> Result<(), AgentError> {
        for s in symbols.iter().flatten() {
            if spec.instrument(s).is_none() || s == crate::market::CASH_SYMBOL {
                return Err(AgentError::InvalidParams(format!(
                    "'{s}' is not a tradable symbol"
                )));
            }
        }
        if symbols.as_ref().is_some_and(|s| s.is_empty()) {
            return Err(AgentError::InvalidParams("symbol list is empty".into()));
        }
        Ok(())
    };
    match kind {
        PolicyKind::BuyAndHold { symbols } => {
            check_symbols(symbols)?;
            let targets = symbols.clone().unwrap_or_else(|| {
                if spec.instrument(&spec.baseline_symbol).is_some() {
                    vec![spec.baseline_symbol.clone()]
                } else {
                    spec.tradable_symbols().map(String::from).collect()
                }
            });
            Ok(Box::new(Scripted::new(BuyAndHold { targets })))
        }
        PolicyKind::EqualWeight {
            symbols,
            rebalance_every,
        } => {
            check_symbols(symbols)?;
            if *rebalance_every == 0 {
                return Err(AgentError::InvalidParams(
                    "rebalance_every must be at least 1".into(),
                ));
            }
            let targets = symbols
                .clone()
                .unwrap_or_else(|| spec.tradable_symbols().map(String::from).collect());
            Ok(Box::new(Scripted::new(EqualWeight {
                targets,
                every: *rebalance_every,
            })))
        }
        PolicyKind::Random { seed } => Ok(Box::new(Scripted::new(RandomTrader {
            rng: ChaCha8Rng::seed_from_u64(seed.unwrap_or(run_seed)),
        }))),
        PolicyKind::Momentum { lookback, top_k } => {
            if *lookback == 0 || *top_k == 0 {
                return Err(AgentError::InvalidParams(
                    "lookback and top_k must be at least 1".into(),
                ));
            }
            Ok(Box::new(Scripted::new(Momentum {
                lookback: *lookback,
                top_k: *top_k,
                history: VecDeque::new(),
            })))
        }
        PolicyKind::Remote => Err(AgentError::InvalidParams(
            "remote agents connect through the tool server".into(),
        )),
    }
}

/// Largest legal quantity whose cost plus fee fits in `cash` at `price`.
pub fn affordable_quantity(spec: &MarketSpec, cash: f64, price: f64) -> Option<f64> {
    if !(price > 0.0) || !(cash > 0.0) {
        return None;
    }
    let cost = |q: f64| {
        let notional = q * price;
        notional + notional * spec.fee_rate
    };
    let mut qty = spec.round_down_quantity(cash / (price * (1.0 + spec.fee_rate)))?;
    // the division can land one ulp or one lot too high
    for _ in 0..64 {
        if cost(qty) <= cash {
            return Some(qty);
        }
        qty = match spec.lot_size {
            Some(lot) if spec.validate_quantity(qty).is_ok() => qty - f64::from(lot),
            _ => qty.next_down(),
        };
        if !(qty > 0.0) {
            return None;
        }
        qty = spec.round_down_quantity(qty)?;
    }
    None
}

fn trade_call(order: &Order) -> (String, Value) {
    let action = match order.action {
        Action::Buy => "buy",
        Action::Sell => "sell",
    };
    (
        Method::Trade.as_str().to_string(),
        json!({"action": action, "symbol": order.symbol, "qty": order.qty}),
    )
}

fn order_of(req: &ToolRequest) -> Option<Order> {
    if req.method != Method::Trade.as_str() {
        return None;
    }
    let action: Action = serde_json::from_value(req.params.get("action")?.clone()).ok()?;
    Some(Order {
        action,
        symbol: req.params.get("symbol")?.as_str()?.to_string(),
        qty: req.params.get("qty")?.as_f64()?,
    })
}

/// A scripted strategy: decides a list of calls at the start of each decision
/// point, optionally reacts to a rejected order.
trait Plan {
    fn plan(&mut self, input: &PolicyInput<'_>) -> (Vec<(String, Value)>, String);

    fn on_rejection(&mut self, _order: &Order, _code: &str, _spec: &MarketSpec) -> Option<Order> {
        None
    }
}

struct Scripted<P> {
    inner: P,
    queue: VecDeque<(String, Value)>,
    planned_for: Option<usize>,
    reasoning: Option<String>,
}

impl<P: Plan> Scripted<P> {
    fn new(inner: P) -> Self {
        Scripted {
            inner,
            queue: VecDeque::new(),
            planned_for: None,
            reasoning: None,
        }
    }
}

impl<P: Plan> Policy for Scripted<P> {
    fn next_step(&mut self, input: &PolicyInput<'_>) -> Step {
        if self.planned_for != Some(input.decision_index) {
            let (calls, reasoning) = self.inner.plan(input);
            self.queue = calls.into();
            self.reasoning = Some(reasoning);
            self.planned_for = Some(input.decision_index);
        } else if let Some(last) = input.transcript.last() {
            if let (Some(order), Some(code)) = (order_of(&last.request), last.response.error_code())
            {
                if let Some(retry) = self.inner.on_rejection(&order, code, input.spec) {
                    self.queue.push_front(trade_call(&retry));
                }
            }
        }
        let reasoning = self.reasoning.take();
        match self.queue.pop_front() {
            Some((method, params)) => Step::Call {
                method,
                params,
                reasoning,
            },
            None => Step::Stop { reasoning },
        }
    }
}

struct BuyAndHold {
    targets: Vec<String>,
}

impl Plan for BuyAndHold {
    fn plan(&mut self, input: &PolicyInput<'_>) -> (Vec<(String, Value)>, String) {
        if input.decision_index > 0 {
            return (vec![], "hold".into());
        }
        let obs = input.observation;
        let priced: Vec<(&String, f64)> = self
            .targets
            .iter()
            .filter_map(|s| obs.current_buy_prices.get(s).map(|p| (s, *p)))
            .collect();
        if priced.is_empty() {
            return (vec![], "no target has a price yet; hold cash".into());
        }
        let mut cash = obs.positions.cash();
        let share = cash / priced.len() as f64;
        let mut calls = Vec::new();
        for (symbol, price) in &priced {
            if let Some(q) = affordable_quantity(input.spec, share.min(cash), *price) {
                let notional = q * price;
                cash -= notional + notional * input.spec.fee_rate;
                calls.push(trade_call(&Order::buy(symbol.as_str(), q)));
            }
        }
        let names: Vec<&str> = priced.iter().map(|(s, _)| s.as_str()).collect();
        (calls, format!("buy and hold {}", names.join(", ")))
    }
}

struct EqualWeight {
    targets: Vec<String>,
    every: usize,
}

impl Plan for EqualWeight {
    fn plan(&mut self, input: &PolicyInput<'_>) -> (Vec<(String, Value)>, String) {
        if !input.decision_index.is_multiple_of(self.every) {
            return (vec![], "between rebalances; hold".into());
        }
        let obs = input.observation;
        let spec = input.spec;
        let prices: BTreeMap<&str, f64> = obs
            .current_buy_prices
            .iter()
            .map(|(s, p)| (s.as_str(), *p))
            .collect();
        let held_value: f64 = obs
            .positions
            .holdings()
            .iter()
            .filter_map(|(s, q)| prices.get(s.as_str()).map(|p| q * p))
            .sum();
        let total = obs.positions.cash() + held_value;
        let active: Vec<&str> = self
            .targets
            .iter()
            .map(String::as_str)
            .filter(|s| prices.contains_key(s))
            .collect();
        if active.is_empty() {
            return (vec![], "no target has a price yet; hold cash".into());
        }
        let target_value = total / active.len() as f64;
        let mut cash = obs.positions.cash();
        let mut sells = Vec::new();
        let mut buys = Vec::new();
        // holdings outside the target set are sold entirely
        for (symbol, qty) in obs.positions.holdings() {
            let Some(&price) = prices.get(symbol.as_str()) else {
                continue;
            };
            let keep = if active.contains(&symbol.as_str()) {
                target_value / price
            } else {
                0.0
            };
            let excess = if keep == 0.0 {
                Some(*qty)
            } else {
                spec.round_down_quantity(qty - keep).filter(|_| qty > &keep)
            };
            if let Some(q) = excess.filter(|q| *q > 0.0 && spec.validate_quantity(*q).is_ok()) {
                let notional = q * price;
                cash += notional - notional * spec.fee_rate;
                sells.push(trade_call(&Order::sell(symbol.as_str(), q)));
            }
        }
        for symbol in &active {
            let price = prices[symbol];
            let current = obs.positions.quantity(symbol) * price;
            if current >= target_value {
                continue;
            }
            let want = (target_value - current).min(cash);
            if let Some(q) = affordable_quantity(spec, want, price) {
                let notional = q * price;
                cash -= notional + notional * spec.fee_rate;
                buys.push(trade_call(&Order::buy(*symbol, q)));
            }
        }
        sells.extend(buys);
        (
            sells,
            format!("rebalance to equal weight across {} symbols", active.len()),
        )
    }
}

struct RandomTrader {
    rng: ChaCha8Rng,
}

impl Plan for RandomTrader {
    fn plan(&mut self, input: &PolicyInput<'_>) -> (Vec<(String, Value)>, String) {
        let obs = input.observation;
        let symbols: Vec<&String> = obs.current_buy_prices.keys().collect();
        let mut calls = Vec::new();
        if symbols.is_empty() {
            return (calls, "nothing priced; hold".into());
        }
        if self.rng.gen_bool(0.3) {
            let s = symbols[self.rng.gen_range(0..symbols.len())];
            calls.push((
                Method::CheckPrice.as_str().to_string(),
                json!({"symbol": s, "lookback": self.rng.gen_range(1..=5)}),
            ));
        }
        let n = self.rng.gen_range(0..=3);
        for _ in 0..n {
            let symbol = symbols[self.rng.gen_range(0..symbols.len())];
            let price = obs.current_buy_prices[symbol];
            let held = obs.positions.quantity(symbol);
            if held > 0.0 && self.rng.gen_bool(0.4) {
                let frac: f64 = self.rng.gen_range(0.1..=1.0);
                let qty = if frac > 0.95 {
                    held
                } else {
                    input.spec.round_down_quantity(held * frac).unwrap_or(held)
                };
                calls.push(trade_call(&Order::sell(symbol.as_str(), qty)));
            } else {
                // sometimes deliberately more than the cash allows
                let frac: f64 = self.rng.gen_range(0.05..1.5);
                let budget = obs.positions.cash() * frac;
                let qty = input
                    .spec
                    .round_down_quantity(budget / price)
                    .unwrap_or_else(|| input.spec.lot_size.map_or(1.0, f64::from));
                calls.push(trade_call(&Order::buy(symbol.as_str(), qty)));
            }
        }
        let reasoning = format!("random draw: {} orders", n);
        (calls, reasoning)
    }

    fn on_rejection(&mut self, order: &Order, code: &str, spec: &MarketSpec) -> Option<Order> {
        if code != "insufficient_liquidity" {
            return None;
        }
        let half = spec.round_down_quantity(order.qty / 2.0)?;
        (half < order.qty).then(|| Order {
            qty: half,
            ..order.clone()
        })
    }
}

struct Momentum {
    lookback: usize,
    top_k: usize,
    history: VecDeque<BTreeMap<String, f64>>,
}

impl Plan for Momentum {
    fn plan(&mut self, input: &PolicyInput<'_>) -> (Vec<(String, Value)>, String) {
        let obs = input.observation;
        self.history.push_back(obs.previous_close_prices.clone());
        if self.history.len() > self.lookback + 1 {
            self.history.pop_front();
        }
        if self.history.len() <= self.lookback {
            return (vec![], "warming up; hold".into());
        }
        let (old, now) = (&self.history[0], &self.history[self.history.len() - 1]);
        let mut ranked: Vec<(&String, f64)> = now
            .iter()
            .filter(|(s, _)| obs.current_buy_prices.contains_key(*s))
            .filter_map(|(s, p)| old.get(s).map(|o| (s, p / o - 1.0)))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let winners: Vec<&String> = ranked.iter().take(self.top_k).map(|(s, _)| *s).collect();

        let spec = input.spec;
        let mut cash = obs.positions.cash();
        let mut calls = Vec::new();
        for (symbol, qty) in obs.positions.holdings() {
            if winners.contains(&symbol) {
                continue;
            }
            if let Some(price) = obs.current_buy_prices.get(symbol) {
                let notional = qty * price;
                cash += notional - notional * spec.fee_rate;
                calls.push(trade_call(&Order::sell(symbol.as_str(), *qty)));
            }
        }
        let new: Vec<&&String> = winners
            .iter()
            .filter(|s| obs.positions.quantity(s) == 0.0)
            .collect();
        if !new.is_empty() {
            let share = cash / new.len() as f64;
            for symbol in new {
                let price = obs.current_buy_prices[symbol.as_str()];
                if let Some(q) = affordable_quantity(spec, share.min(cash), price) {
                    let notional = q * price;
                    cash -= notional + notional * spec.fee_rate;
                    calls.push(trade_call(&Order::buy(symbol.as_str(), q)));
                }
            }
        }
        let names: Vec<&str> = winners.iter().map(|s| s.as_str()).collect();
        (
            calls,
            format!(
                "hold top {} by trailing return: {}",
                self.top_k,
                names.join(", ")
            ),
        )
    }
}
