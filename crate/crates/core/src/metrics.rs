//! Performance metrics over an equity curve.
//!
//! All functions are single forward passes over the returns. Percent-valued
//! outputs (CR, Vol, MDD, excess) are in percent; Sortino is dimensionless.
//! Downside deviation divides by `T`, volatility by `T - 1`.

use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::journal::{DecisionRecord, EquityPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} points, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("valuation {value} at index {index} is not positive")]
    NonPositiveValuation { index: usize, value: f64 },
    #[error("return {value} at index {index} is not above -100%")]
    InvalidReturn { index: usize, value: f64 },
    #[error("periods_per_year must be positive")]
    InvalidPeriods,
    #[error("downside deviation is zero: no return falls below the target")]
    UndefinedDownside,
    #[error("decision log is empty")]
    EmptyLog,
    #[error("curves cover different timestamps")]
    WindowMismatch,
}

/// Per-period simple returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    returns: Vec<f64>,
    periods_per_year: f64,
}

impl ReturnSeries {
    pub fn new(returns: Vec<f64>, periods_per_year: f64) -> Result<Self, MetricsError> {
        if !(periods_per_year > 0.0) || !periods_per_year.is_finite() {
            return Err(MetricsError::InvalidPeriods);
        }
        if let Some((index, &value)) = returns
            .iter()
            .enumerate()
            .find(|(_, r)| !(**r > -1.0) || !r.is_finite())
        {
            return Err(MetricsError::InvalidReturn { index, value });
        }
        Ok(ReturnSeries {
            returns,
            periods_per_year,
        })
    }

    pub fn returns(&self) -> &[f64] {
        &self.returns
    }

    pub fn periods_per_year(&self) -> f64 {
        self.periods_per_year
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    fn require(&self, needed: usize) -> Result<(), MetricsError> {
        if self.returns.len() < needed {
            return Err(MetricsError::TooShort {
                needed,
                got: self.returns.len(),
            });
        }
        Ok(())
    }
}

/// `returns[i] = V[i+1] / V[i] - 1`.
pub fn values_to_returns(
    values: &[f64],
    periods_per_year: f64,
) -> Result<ReturnSeries, MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooShort {
            needed: 2,
            got: values.len(),
        });
    }
    if let Some((index, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > 0.0) || !v.is_finite())
    {
        return Err(MetricsError::NonPositiveValuation { index, value });
    }
    let returns = values.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    ReturnSeries::new(returns, periods_per_year)
}

pub fn equity_to_returns(
    curve: &[EquityPoint],
    periods_per_year: f64,
) -> Result<ReturnSeries, MetricsError> {
    let values: Vec<f64> = curve.iter().map(|p| p.valuation).collect();
    values_to_returns(&values, periods_per_year)
}

/// `100 * (prod(1 + r) - 1)`.
pub fn cumulative_return(series: &ReturnSeries) -> f64 {
    let growth = series.returns.iter().fold(1.0, |acc, r| acc * (1.0 + r));
    100.0 * (growth - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SortinoParts {
    pub mean_return: f64,
    pub downside_dev: f64,
}

/// Mean return and downside deviation `sqrt(sum(min(r - target, 0)^2) / T)`.
pub fn downside_parts(series: &ReturnSeries, target: f64) -> Result<SortinoParts, MetricsError> {
    series.require(1)?;
    let mut sum = 0.0;
    let mut downside_sq = 0.0;
    for r in &series.returns {
        sum += r;
        let shortfall = (r - target).min(0.0);
        downside_sq += shortfall * shortfall;
    }
    let n = series.returns.len() as f64;
    Ok(SortinoParts {
        mean_return: sum / n,
        downside_dev: (downside_sq / n).sqrt(),
    })
}

/// `(mean - target) / downside_dev`, times `sqrt(periods_per_year)` when
/// `annualize` is set.
pub fn sortino(series: &ReturnSeries, target: f64, annualize: bool) -> Result<f64, MetricsError> {
    let parts = downside_parts(series, target)?;
    if parts.downside_dev == 0.0 {
        return Err(MetricsError::UndefinedDownside);
    }
    let raw = (parts.mean_return - target) / parts.downside_dev;
    Ok(if annualize {
        raw * series.periods_per_year.sqrt()
    } else {
        raw
    })
}

/// Sample standard deviation in percent, optionally annualized.
pub fn volatility(series: &ReturnSeries, annualize: bool) -> Result<f64, MetricsError> {
    series.require(2)?;
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, r) in series.returns.iter().enumerate() {
        let delta = r - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (r - mean);
    }
    let sd = (m2 / (series.returns.len() - 1) as f64).sqrt();
    let scale = if annualize {
        series.periods_per_year.sqrt()
    } else {
        1.0
    };
    Ok(100.0 * sd * scale)
}

/// Worst peak-to-trough decline of `V_t = prod_{i<=t}(1 + r_i)` in percent
/// (zero or negative). The running peak starts at `V_1`.
pub fn max_drawdown(series: &ReturnSeries) -> f64 {
    let mut value = 1.0;
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for r in &series.returns {
        value *= 1.0 + r;
        peak = peak.max(value);
        worst = worst.min((value - peak) / peak);
    }
    100.0 * worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeStats {
    pub no_exec: f64,
    pub avg_trades: f64,
}

/// Share of decision points without fills, and mean fills per decision point.
pub fn trade_stats(records: &[DecisionRecord]) -> Result<TradeStats, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let n = records.len() as f64;
    let idle = records.iter().filter(|r| r.fills.is_empty()).count() as f64;
    let fills: usize = records.iter().map(|r| r.fills.len()).sum();
    Ok(TradeStats {
        no_exec: idle / n,
        avg_trades: fills as f64 / n,
    })
}

/// Rounds a percent value to the two decimals used in reports.
pub fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Excess return in percentage points, computed on reported (two-decimal)
/// cumulative returns.
pub fn excess_cr(agent_cr: f64, baseline_cr: f64) -> f64 {
    round2(round2(agent_cr) - round2(baseline_cr))
}

pub fn compare_to_baseline(
    agent: &[EquityPoint],
    baseline: &[EquityPoint],
    periods_per_year: f64,
) -> Result<f64, MetricsError> {
    let same_window =
        agent.len() == baseline.len() && agent.iter().zip(baseline).all(|(a, b)| a.ts == b.ts);
    if !same_window {
        return Err(MetricsError::WindowMismatch);
    }
    let a = cumulative_return(&equity_to_returns(agent, periods_per_year)?);
    let b = cumulative_return(&equity_to_returns(baseline, periods_per_year)?);
    Ok(excess_cr(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub periods: usize,
    pub periods_per_year: f64,
    pub cr: f64,
    pub sortino: Option<f64>,
    pub vol: Option<f64>,
    pub mdd: f64,
    pub mean_return: f64,
    pub downside_dev: f64,
    pub no_exec: f64,
    pub avg_trades: f64,
    pub excess_cr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub symbol: String,
    pub cr: f64,
    pub sortino: Option<f64>,
    pub vol: Option<f64>,
    pub mdd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub market: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub metrics: MetricReport,
    pub baseline: Option<BaselineReport>,
}

/// Metrics for a run: annualized Sortino against a zero target, annualized
/// volatility, trade statistics and, when a baseline curve is given, excess CR.
pub fn build_report(
    curve: &[EquityPoint],
    records: &[DecisionRecord],
    periods_per_year: f64,
    baseline: Option<(&str, &[EquityPoint])>,
) -> Result<(MetricReport, Option<BaselineReport>), MetricsError> {
    let series = equity_to_returns(curve, periods_per_year)?;
    let parts = downside_parts(&series, 0.0)?;
    let stats = trade_stats(records)?;
    let cr = cumulative_return(&series);

    let (baseline_report, excess) = match baseline {
        Some((symbol, bcurve)) => {
            let excess = compare_to_baseline(curve, bcurve, periods_per_year)?;
            let bseries = equity_to_returns(bcurve, periods_per_year)?;
            let report = BaselineReport {
                symbol: symbol.to_string(),
                cr: cumulative_return(&bseries),
                sortino: sortino(&bseries, 0.0, true).ok(),
                vol: volatility(&bseries, true).ok(),
                mdd: max_drawdown(&bseries),
            };
            (Some(report), Some(excess))
        }
        None => (None, None),
    };

    let report = MetricReport {
        periods: series.len(),
        periods_per_year,
        cr,
        sortino: sortino(&series, 0.0, true).ok(),
        vol: volatility(&series, true).ok(),
        mdd: max_drawdown(&series),
        mean_return: parts.mean_return,
        downside_dev: parts.downside_dev,
        no_exec: stats.no_exec,
        avg_trades: stats.avg_trades,
        excess_cr: excess,
    };
    Ok((report, baseline_report))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", round2(x)))
        .unwrap_or_else(|| "n/a".to_string())
}

/// Aligned comparison table: one column per run, then one column per distinct
/// baseline (symbol and window), rows CR / SR / Vol / MDD followed by trade
/// statistics.
pub fn render_table(runs: &[RunReport]) -> String {
    let mut baselines: Vec<(&BaselineReport, DateTime<Utc>, DateTime<Utc>)> = Vec::new();
    for r in runs {
        if let Some(b) = &r.baseline {
            if !baselines
                .iter()
                .any(|(x, s, e)| x.symbol == b.symbol && *s == r.start && *e == r.end)
            {
                baselines.push((b, r.start, r.end));
            }
        }
    }
    let mut headers: Vec<String> = vec!["metric".into()];
    headers.extend(runs.iter().map(|r| r.run_id.clone()));
    headers.extend(
        baselines
            .iter()
            .map(|(b, _, _)| format!("baseline ({})", b.symbol)),
    );

    type Cell<'a> = &'a dyn Fn(&RunReport) -> String;
    type BaseCell<'a> = Option<&'a dyn Fn(&BaselineReport) -> String>;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |name: &str, per_run: Cell, per_base: BaseCell| {
        let mut row = vec![name.to_string()];
        row.extend(runs.iter().map(per_run));
        row.extend(
            baselines
                .iter()
                .map(|(b, _, _)| per_base.map(|f| f(b)).unwrap_or_default()),
        );
        rows.push(row);
    };
    push(
        "CR (%)",
        &|r| cell(Some(r.metrics.cr)),
        Some(&|b| cell(Some(b.cr))),
    );
    push(
        "SR",
        &|r| cell(r.metrics.sortino),
        Some(&|b| cell(b.sortino)),
    );
    push("Vol (%)", &|r| cell(r.metrics.vol), Some(&|b| cell(b.vol)));
    push(
        "MDD (%)",
        &|r| cell(Some(r.metrics.mdd)),
        Some(&|b| cell(Some(b.mdd))),
    );
    push("Excess CR (pp)", &|r| cell(r.metrics.excess_cr), None);
    push("No-exec", &|r| format!("{:.4}", r.metrics.no_exec), None);
    push(
        "Avg trades",
        &|r| format!("{:.4}", r.metrics.avg_trades),
        None,
    );

    let widths: Vec<usize> = (0..headers.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain(std::iter::once(headers[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        for (c, text) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(out, "{:<w$}", text, w = widths[c]);
            } else {
                let _ = write!(out, "  {:>w$}", text, w = widths[c]);
            }
        }
        out.push('\n');
    };
    line(&headers, &mut out);
    for row in &rows {
        line(row, &mut out);
    }
    out
}
