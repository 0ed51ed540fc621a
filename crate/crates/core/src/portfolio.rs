//! Positions, cash and order execution.
//!
//! Execution is all-or-nothing. A rejected order returns a [`Rejection`] and
//! the caller keeps the state it passed in, untouched.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::market::{MarketSpec, QuantityViolation, CASH_SYMBOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Buy,
    Sell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub action: Action,
    pub symbol: String,
    pub qty: f64,
}

impl Order {
    pub fn buy(symbol: impl Into<String>, qty: f64) -> Self {
        Order {
            action: Action::Buy,
            symbol: symbol.into(),
            qty,
        }
    }

    pub fn sell(symbol: impl Into<String>, qty: f64) -> Self {
        Order {
            action: Action::Sell,
            symbol: symbol.into(),
            qty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub order: Order,
    pub price: f64,
    pub ts: DateTime<Utc>,
    pub cash_delta: f64,
    pub fee: f64,
    pub resulting_cash: f64,
}

/// Why an order was refused. [`Rejection::code`] is the wire error code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Rejection {
    #[error("unknown symbol '{0}'")]
    UnknownSymbol(String),
    #[error("CASH cannot be traded")]
    CashNotTradable,
    #[error("quantity must be positive, got {0}")]
    NonPositiveQuantity(f64),
    #[error("quantity {qty} is not a multiple of the lot size {lot_size}")]
    LotSizeViolation { qty: f64, lot_size: u32 },
    #[error("quantity {0} must be a whole number of shares")]
    FractionalQuantity(f64),
    #[error("execution price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("order needs {required} cash but only {available} is available")]
    InsufficientLiquidity { required: f64, available: f64 },
    #[error("cannot sell {requested} {symbol}: holding {held}")]
    InsufficientHoldings {
        symbol: String,
        requested: f64,
        held: f64,
    },
    #[error("market is closed at {0}")]
    MarketClosed(DateTime<Utc>),
    #[error("no executable price for {symbol} at {ts}")]
    NoPrice { symbol: String, ts: DateTime<Utc> },
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::UnknownSymbol(_) => "unknown_symbol",
            Rejection::CashNotTradable => "cash_not_tradable",
            Rejection::NonPositiveQuantity(_) => "non_positive_quantity",
            Rejection::LotSizeViolation { .. } => "lot_size_violation",
            Rejection::FractionalQuantity(_) => "fractional_quantity",
            Rejection::NonPositivePrice(_) => "non_positive_price",
            Rejection::InsufficientLiquidity { .. } => "insufficient_liquidity",
            Rejection::InsufficientHoldings { .. } => "insufficient_holdings",
            Rejection::MarketClosed(_) => "market_closed",
            Rejection::NoPrice { .. } => "no_data",
        }
    }
}

impl From<QuantityViolation> for Rejection {
    fn from(v: QuantityViolation) -> Self {
        match v {
            QuantityViolation::NonPositiveQuantity(q) => Rejection::NonPositiveQuantity(q),
            QuantityViolation::LotSizeViolation { qty, lot_size } => {
                Rejection::LotSizeViolation { qty, lot_size }
            }
            QuantityViolation::FractionalQuantity(q) => Rejection::FractionalQuantity(q),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValuationError {
    #[error("no price for held symbol '{0}'")]
    MissingPrice(String),
}

/// Cash plus non-negative holdings. Zero positions are not stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PortfolioState {
    cash: f64,
    holdings: BTreeMap<String, f64>,
}

impl PortfolioState {
    pub fn with_cash(cash: f64) -> Self {
        assert!(
            cash >= 0.0 && cash.is_finite(),
            "cash must be finite and non-negative"
        );
        PortfolioState {
            cash,
            holdings: BTreeMap::new(),
        }
    }

    pub fn cash(&self) -> f64 {
        self.cash
    }

    pub fn holdings(&self) -> &BTreeMap<String, f64> {
        &self.holdings
    }

    pub fn quantity(&self, symbol: &str) -> f64 {
        self.holdings.get(symbol).copied().unwrap_or(0.0)
    }

    /// Cash at face value plus each holding marked at `prices`.
    pub fn valuation(&self, prices: &BTreeMap<String, f64>) -> Result<f64, ValuationError> {
        let mut total = self.cash;
        for (symbol, qty) in &self.holdings {
            let price = prices
                .get(symbol)
                .ok_or_else(|| ValuationError::MissingPrice(symbol.clone()))?;
            total += qty * price;
        }
        Ok(total)
    }

    pub fn validate_order(
        &self,
        order: &Order,
        exec_price: f64,
        spec: &MarketSpec,
    ) -> Result<(), Rejection> {
        self.check(order, exec_price, spec).map(|_| ())
    }

    // Returns (notional, fee) when the order is acceptable.
    fn check(
        &self,
        order: &Order,
        exec_price: f64,
        spec: &MarketSpec,
    ) -> Result<(f64, f64), Rejection> {
        if order.symbol == CASH_SYMBOL {
            return Err(Rejection::CashNotTradable);
        }
        if spec.instrument(&order.symbol).is_none() {
            return Err(Rejection::UnknownSymbol(order.symbol.clone()));
        }
        if !(exec_price > 0.0) || !exec_price.is_finite() {
            return Err(Rejection::NonPositivePrice(exec_price));
        }
        spec.validate_quantity(order.qty)?;
        let notional = order.qty * exec_price;
        let fee = notional * spec.fee_rate;
        match order.action {
            Action::Buy => {
                let required = notional + fee;
                if required > self.cash {
                    return Err(Rejection::InsufficientLiquidity {
                        required,
                        available: self.cash,
                    });
                }
            }
            Action::Sell => {
                let held = self.quantity(&order.symbol);
                if order.qty > held {
                    return Err(Rejection::InsufficientHoldings {
                        symbol: order.symbol.clone(),
                        requested: order.qty,
                        held,
                    });
                }
                if fee > self.cash + notional {
                    return Err(Rejection::InsufficientLiquidity {
                        required: fee,
                        available: self.cash + notional,
                    });
                }
            }
        }
        Ok((notional, fee))
    }

    /// Executes a market order at `exec_price`. On success returns the new
    /// state and the fill; `self` is never modified.
    pub fn execute(
        &self,
        order: &Order,
        exec_price: f64,
        ts: DateTime<Utc>,
        spec: &MarketSpec,
    ) -> Result<(PortfolioState, Fill), Rejection> {
        if !spec.is_trading_time(ts) {
            return Err(Rejection::MarketClosed(ts));
        }
        let (notional, fee) = self.check(order, exec_price, spec)?;
        let mut next = self.clone();
        let cash_delta = match order.action {
            Action::Buy => {
                *next.holdings.entry(order.symbol.clone()).or_insert(0.0) += order.qty;
                -notional - fee
            }
            Action::Sell => {
                let remaining = self.quantity(&order.symbol) - order.qty;
                if remaining > 0.0 {
                    next.holdings.insert(order.symbol.clone(), remaining);
                } else {
                    next.holdings.remove(&order.symbol);
                }
                notional - fee
            }
        };
        next.cash = self.cash + cash_delta;
        // cost == cash can still round to a hair below zero
        if next.cash < 0.0 {
            next.cash = 0.0;
        }
        let fill = Fill {
            order: order.clone(),
            price: exec_price,
            ts,
            cash_delta,
            fee,
            resulting_cash: next.cash,
        };
        Ok((next, fill))
    }
}

/// Serializes as `{"CASH": <cash>, "<TICKER>": <qty>, ...}`.
impl Serialize for PortfolioState {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.holdings.len() + 1))?;
        map.serialize_entry(CASH_SYMBOL, &self.cash)?;
        for (k, v) in &self.holdings {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for PortfolioState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct SnapshotVisitor;

        impl<'de> Visitor<'de> for SnapshotVisitor {
            type Value = PortfolioState;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map of ticker to quantity with a CASH entry")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut cash = None;
                let mut holdings = BTreeMap::new();
                while let Some((key, value)) = access.next_entry::<String, f64>()? {
                    if value < 0.0 || !value.is_finite() {
                        return Err(de::Error::custom(format!("negative or non-finite {key}")));
                    }
                    if key == CASH_SYMBOL {
                        cash = Some(value);
                    } else if value > 0.0 {
                        holdings.insert(key, value);
                    }
                }
                let cash = cash.ok_or_else(|| de::Error::missing_field(CASH_SYMBOL))?;
                Ok(PortfolioState { cash, holdings })
            }
        }

        deserializer.deserialize_map(SnapshotVisitor)
    }
}
