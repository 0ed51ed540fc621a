//! Point-in-time market simulation for evaluating trading agents.
//!
//! Agents see the market only through the tool protocol in [`toolserver`]:
//! every query is clamped to the session clock, orders fill at the open of
//! the current period, and results are scored by [`metrics`].

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod datastore;
pub mod journal;
pub mod market;
pub mod metrics;
pub mod portfolio;
pub mod report;
pub mod runner;
pub mod toolserver;

pub use agent::{run_decision_point, run_session, Policy, PolicyInput, PolicyKind, Step};
pub use datastore::{DataStore, StoreBuilder};
pub use market::{MarketId, MarketSpec};
pub use portfolio::{Order, PortfolioState};
pub use toolserver::{Session, SessionConfig, ToolRequest, ToolResponse};
