//! Markets as data.
//!
//! A [`MarketSpec`] bundles an instrument universe, a trading calendar, quantity
//! rules and the annualization convention. US equities, A-shares and crypto
//! pairs differ only in the values stored here; nothing downstream branches on
//! the market id except where a default has to be chosen.
//!
//! Calendars use fixed UTC offsets. Civil-time rules (DST) are not modelled, so
//! a given `(spec, timestamp)` always yields the same answer.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{
    DateTime, Datelike, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Timelike, Utc,
    Weekday,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ticker reserved for the cash instrument.
pub const CASH_SYMBOL: &str = "CASH";

const TRADING_DAYS_EQUITY: f64 = 252.0;
const TRADING_DAYS_CRYPTO: f64 = 365.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("unknown market '{0}' (expected one of us, ashare, crypto)")]
    UnknownMarket(String),
    #[error("malformed universe file {path}: line {line}: {reason}")]
    MalformedUniverseFile {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("malformed calendar: line {line}: {reason}")]
    MalformedCalendar { line: usize, reason: String },
    #[error("i/o error reading {path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Quantity rule violations. Also surfaced by the portfolio as order rejections.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantityViolation {
    #[error("quantity must be positive, got {0}")]
    NonPositiveQuantity(f64),
    #[error("quantity {qty} is not a multiple of the lot size {lot_size}")]
    LotSizeViolation { qty: f64, lot_size: u32 },
    #[error("quantity {0} must be a whole number of shares")]
    FractionalQuantity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarketId {
    Us,
    Ashare,
    Crypto,
}

impl MarketId {
    pub fn as_str(self) -> &'static str {
        match self {
            MarketId::Us => "us",
            MarketId::Ashare => "ashare",
            MarketId::Crypto => "crypto",
        }
    }
}

impl fmt::Display for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarketId {
    type Err = MarketError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "us" => Ok(MarketId::Us),
            "ashare" | "a-share" | "cn" => Ok(MarketId::Ashare),
            "crypto" => Ok(MarketId::Crypto),
            other => Err(MarketError::UnknownMarket(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    Equity,
    CryptoPair,
    Cash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instrument {
    pub symbol: String,
    pub kind: InstrumentKind,
    pub display_name: String,
}

impl Instrument {
    pub fn cash() -> Self {
        Instrument {
            symbol: CASH_SYMBOL.to_string(),
            kind: InstrumentKind::Cash,
            display_name: "Cash".to_string(),
        }
    }

    pub fn is_cash(&self) -> bool {
        self.kind == InstrumentKind::Cash
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantityGranularity {
    IntegerShares,
    Fractional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Hourly,
    Daily,
}

impl Frequency {
    pub fn step(self) -> Duration {
        match self {
            Frequency::Hourly => Duration::hours(1),
            Frequency::Daily => Duration::days(1),
        }
    }
}

impl FromStr for Frequency {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hourly" | "1h" => Ok(Frequency::Hourly),
            "daily" | "1d" => Ok(Frequency::Daily),
            other => Err(format!("unknown frequency '{other}'")),
        }
    }
}

/// One recurring session: a set of weekdays plus an open/close time in
/// exchange-local time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionWindow {
    weekdays: [bool; 7],
    open: NaiveTime,
    close: NaiveTime,
    offset: FixedOffset,
}

impl SessionWindow {
    pub fn new(
        weekdays: &[Weekday],
        open: NaiveTime,
        close: NaiveTime,
        offset: FixedOffset,
    ) -> Result<Self, String> {
        if open >= close {
            return Err(format!("session open {open} is not before close {close}"));
        }
        if weekdays.is_empty() {
            return Err("session has no weekdays".to_string());
        }
        let mut days = [false; 7];
        for d in weekdays {
            days[d.num_days_from_monday() as usize] = true;
        }
        Ok(SessionWindow {
            weekdays: days,
            open,
            close,
            offset,
        })
    }

    pub fn open(&self) -> NaiveTime {
        self.open
    }

    pub fn close(&self) -> NaiveTime {
        self.close
    }

    pub fn offset(&self) -> FixedOffset {
        self.offset
    }

    pub fn runs_on(&self, day: Weekday) -> bool {
        self.weekdays[day.num_days_from_monday() as usize]
    }

    fn contains_local(&self, local_time: NaiveTime) -> bool {
        self.open <= local_time && local_time < self.close
    }
}

impl fmt::Display for SessionWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = ["MON", "TUE", "WED", "THU", "FRI", "SAT", "SUN"];
        let days: Vec<&str> = (0..7)
            .filter(|i| self.weekdays[*i])
            .map(|i| names[i])
            .collect();
        write!(
            f,
            "{} {}-{} {}",
            days.join(","),
            self.open.format("%H:%M"),
            self.close.format("%H:%M"),
            format_offset(self.offset)
        )
    }
}

impl FromStr for SessionWindow {
    type Err = String;

    /// Parses `"MON-FRI 09:30-16:00 UTC-5"`. Day sets may be ranges
    /// (`MON-FRI`), lists (`MON,WED,FRI`) or a mix; the offset accepts
    /// `UTC`, `UTC+8`, `UTC-5`, `UTC+05:30`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(format!(
                "expected '<DAYS> <HH:MM>-<HH:MM> <UTC±H>', got '{}'",
                s.trim()
            ));
        }
        let days = parse_weekday_set(parts[0])?;
        let (open, close) = parts[1]
            .split_once('-')
            .ok_or_else(|| format!("bad time range '{}'", parts[1]))?;
        let open = NaiveTime::parse_from_str(open, "%H:%M")
            .map_err(|e| format!("bad open time '{open}': {e}"))?;
        let close = parse_close_time(close)?;
        let offset = parse_utc_offset(parts[2])?;
        SessionWindow::new(&days, open, close, offset)
    }
}

// "24:00" is accepted as the end of day.
fn parse_close_time(s: &str) -> Result<NaiveTime, String> {
    if s == "24:00" {
        return Ok(NaiveTime::from_hms_nano_opt(23, 59, 59, 999_999_999).expect("valid"));
    }
    NaiveTime::parse_from_str(s, "%H:%M").map_err(|e| format!("bad close time '{s}': {e}"))
}

fn parse_weekday(s: &str) -> Result<Weekday, String> {
    match s.to_ascii_uppercase().as_str() {
        "MON" => Ok(Weekday::Mon),
        "TUE" => Ok(Weekday::Tue),
        "WED" => Ok(Weekday::Wed),
        "THU" => Ok(Weekday::Thu),
        "FRI" => Ok(Weekday::Fri),
        "SAT" => Ok(Weekday::Sat),
        "SUN" => Ok(Weekday::Sun),
        other => Err(format!("unknown weekday '{other}'")),
    }
}

fn parse_weekday_set(s: &str) -> Result<Vec<Weekday>, String> {
    let mut out = Vec::new();
    for item in s.split(',') {
        if let Some((a, b)) = item.split_once('-') {
            let start = parse_weekday(a)?.num_days_from_monday();
            let end = parse_weekday(b)?.num_days_from_monday();
            if start > end {
                return Err(format!("weekday range '{item}' runs backwards"));
            }
            for d in start..=end {
                out.push(weekday_from_index(d));
            }
        } else {
            out.push(parse_weekday(item)?);
        }
    }
    Ok(out)
}

fn weekday_from_index(i: u32) -> Weekday {
    match i {
        0 => Weekday::Mon,
        1 => Weekday::Tue,
        2 => Weekday::Wed,
        3 => Weekday::Thu,
        4 => Weekday::Fri,
        5 => Weekday::Sat,
        _ => Weekday::Sun,
    }
}

fn parse_utc_offset(s: &str) -> Result<FixedOffset, String> {
    let rest = s
        .strip_prefix("UTC")
        .ok_or_else(|| format!("offset '{s}' must start with UTC"))?;
    if rest.is_empty() {
        return Ok(FixedOffset::east_opt(0).expect("zero offset"));
    }
    let (sign, body) = match rest.as_bytes()[0] {
        b'+' => (1, &rest[1..]),
        b'-' => (-1, &rest[1..]),
        _ => return Err(format!("offset '{s}' needs a sign")),
    };
    let (hours, minutes) = match body.split_once(':') {
        Some((h, m)) => (h, m),
        None => (body, "0"),
    };
    let hours: i32 = hours
        .parse()
        .map_err(|_| format!("bad offset hours in '{s}'"))?;
    let minutes: i32 = minutes
        .parse()
        .map_err(|_| format!("bad offset minutes in '{s}'"))?;
    if hours > 14 || minutes >= 60 {
        return Err(format!("offset '{s}' out of range"));
    }
    FixedOffset::east_opt(sign * (hours * 3600 + minutes * 60))
        .ok_or_else(|| format!("offset '{s}' out of range"))
}

fn format_offset(offset: FixedOffset) -> String {
    let secs = offset.local_minus_utc();
    if secs == 0 {
        return "UTC".to_string();
    }
    let sign = if secs < 0 { '-' } else { '+' };
    let secs = secs.abs();
    let (h, m) = (secs / 3600, (secs % 3600) / 60);
    if m == 0 {
        format!("UTC{sign}{h}")
    } else {
        format!("UTC{sign}{h:02}:{m:02}")
    }
}

/// Exchange sessions and holidays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    sessions: Vec<SessionWindow>,
    holidays: BTreeSet<NaiveDate>,
    continuous: bool,
}

impl TradingCalendar {
    /// Round-the-clock market with no holidays.
    pub fn continuous() -> Self {
        TradingCalendar {
            sessions: Vec::new(),
            holidays: BTreeSet::new(),
            continuous: true,
        }
    }

    /// Builds a session calendar. Windows must share one UTC offset and must
    /// not overlap on any weekday.
    pub fn with_sessions(
        mut sessions: Vec<SessionWindow>,
        holidays: BTreeSet<NaiveDate>,
    ) -> Result<Self, String> {
        if sessions.is_empty() {
            return Err("a non-continuous calendar needs at least one session".to_string());
        }
        let offset = sessions[0].offset;
        if sessions.iter().any(|w| w.offset != offset) {
            return Err("all session windows must use the same UTC offset".to_string());
        }
        sessions.sort_by_key(|w| w.open);
        for (i, a) in sessions.iter().enumerate() {
            for b in &sessions[i + 1..] {
                let shares_day = (0..7).any(|d| a.weekdays[d] && b.weekdays[d]);
                if shares_day && b.open < a.close {
                    return Err(format!("session windows '{a}' and '{b}' overlap"));
                }
            }
        }
        Ok(TradingCalendar {
            sessions,
            holidays,
            continuous: false,
        })
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    pub fn sessions(&self) -> &[SessionWindow] {
        &self.sessions
    }

    pub fn holidays(&self) -> &BTreeSet<NaiveDate> {
        &self.holidays
    }

    pub fn offset(&self) -> FixedOffset {
        self.sessions
            .first()
            .map(|w| w.offset)
            .unwrap_or_else(|| FixedOffset::east_opt(0).expect("zero offset"))
    }

    pub fn is_holiday(&self, day: NaiveDate) -> bool {
        self.holidays.contains(&day)
    }

    pub fn is_trading_day(&self, day: NaiveDate) -> bool {
        if self.continuous {
            return true;
        }
        !self.is_holiday(day) && self.sessions.iter().any(|w| w.runs_on(day.weekday()))
    }

    pub fn is_open(&self, t: DateTime<Utc>) -> bool {
        if self.continuous {
            return true;
        }
        let local = t.with_timezone(&self.offset());
        let day = local.date_naive();
        if self.is_holiday(day) {
            return false;
        }
        let time = local.time();
        self.sessions
            .iter()
            .any(|w| w.runs_on(day.weekday()) && w.contains_local(time))
    }

    /// Decision instants within `[start, end]`, ascending.
    ///
    /// Daily: one per trading day at the first session open (00:00 UTC for
    /// continuous markets). Hourly: every whole hour counted from each
    /// session open while still inside the session.
    pub fn decision_times(
        &self,
        frequency: Frequency,
        start: DateTime<Utc>,
        end: DateTime<Utc>,
    ) -> Vec<DateTime<Utc>> {
        if start > end {
            return Vec::new();
        }
        if self.continuous {
            return continuous_grid(frequency, start, end);
        }
        let offset = self.offset();
        let first_day = start.with_timezone(&offset).date_naive();
        let last_day = end.with_timezone(&offset).date_naive();
        let mut out = Vec::new();
        let mut day = first_day;
        while day <= last_day {
            if !self.is_holiday(day) {
                let windows = self.sessions.iter().filter(|w| w.runs_on(day.weekday()));
                for (idx, w) in windows.enumerate() {
                    match frequency {
                        Frequency::Daily => {
                            if idx == 0 {
                                out.push(local_to_utc(offset, day, w.open));
                            }
                        }
                        Frequency::Hourly => {
                            let mut t = w.open;
                            loop {
                                out.push(local_to_utc(offset, day, t));
                                let (next, wrapped) = t.overflowing_add_signed(Duration::hours(1));
                                if wrapped != 0 || next >= w.close {
                                    break;
                                }
                                t = next;
                            }
                        }
                    }
                }
            }
            day = day.succ_opt().expect("date in range");
        }
        out.retain(|t| *t >= start && *t <= end);
        out
    }

    pub fn is_decision_time(&self, frequency: Frequency, t: DateTime<Utc>) -> bool {
        self.decision_times(frequency, t, t).first() == Some(&t)
    }

    /// Parses the key-value calendar format:
    ///
    /// ```text
    /// # comment
    /// continuous = false
    /// session = MON-FRI 09:30-11:30 UTC+8
    /// session = MON-FRI 13:00-15:00 UTC+8
    /// holiday = 2025-10-01
    /// holidays = 2025-10-02, 2025-10-03
    /// ```
    pub fn parse(text: &str) -> Result<Self, MarketError> {
        let mut continuous = false;
        let mut sessions = Vec::new();
        let mut holidays = BTreeSet::new();
        let bad = |line: usize, reason: String| MarketError::MalformedCalendar { line, reason };

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line_no, format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "continuous" => {
                    continuous = value
                        .parse::<bool>()
                        .map_err(|_| bad(line_no, format!("'{value}' is not true/false")))?;
                }
                "session" => sessions.push(
                    value
                        .parse::<SessionWindow>()
                        .map_err(|e| bad(line_no, e))?,
                ),
                "holiday" | "holidays" => {
                    for d in value.split(',').map(str::trim).filter(|d| !d.is_empty()) {
                        let date = NaiveDate::parse_from_str(d, "%Y-%m-%d")
                            .map_err(|e| bad(line_no, format!("bad date '{d}': {e}")))?;
                        holidays.insert(date);
                    }
                }
                other => return Err(bad(line_no, format!("unknown key '{other}'"))),
            }
        }

        if continuous {
            if !sessions.is_empty() || !holidays.is_empty() {
                return Err(bad(
                    0,
                    "a continuous calendar cannot declare sessions or holidays".to_string(),
                ));
            }
            return Ok(TradingCalendar::continuous());
        }
        TradingCalendar::with_sessions(sessions, holidays).map_err(|e| bad(0, e))
    }

    pub fn load(path: &Path) -> Result<Self, MarketError> {
        let text = fs::read_to_string(path).map_err(|e| MarketError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        TradingCalendar::parse(&text)
    }

    /// Built-in regular-session calendar for a market. No holidays; load a
    /// calendar file to add them.
    pub fn default_for(market: MarketId) -> Self {
        let weekdays = [
            Weekday::Mon,
            Weekday::Tue,
            Weekday::Wed,
            Weekday::Thu,
            Weekday::Fri,
        ];
        let hm = |h, m| NaiveTime::from_hms_opt(h, m, 0).expect("valid time");
        match market {
            MarketId::Crypto => TradingCalendar::continuous(),
            MarketId::Us => {
                let et = FixedOffset::west_opt(5 * 3600).expect("valid offset");
                let w = SessionWindow::new(&weekdays, hm(9, 30), hm(16, 0), et).expect("valid");
                TradingCalendar::with_sessions(vec![w], BTreeSet::new()).expect("valid")
            }
            MarketId::Ashare => {
                let cst = FixedOffset::east_opt(8 * 3600).expect("valid offset");
                let am = SessionWindow::new(&weekdays, hm(9, 30), hm(11, 30), cst).expect("valid");
                let pm = SessionWindow::new(&weekdays, hm(13, 0), hm(15, 0), cst).expect("valid");
                TradingCalendar::with_sessions(vec![am, pm], BTreeSet::new()).expect("valid")
            }
        }
    }

    /// Hours of regular trading per trading day.
    pub fn session_hours_per_day(&self) -> f64 {
        if self.continuous {
            return 24.0;
        }
        let first_day = (0..7)
            .find(|d| self.sessions.iter().any(|w| w.weekdays[*d]))
            .unwrap_or(0);
        self.sessions
            .iter()
            .filter(|w| w.weekdays[first_day])
            .map(|w| (w.close - w.open).num_minutes() as f64 / 60.0)
            .sum()
    }

    /// Renders back into the key-value format accepted by [`TradingCalendar::parse`].
    pub fn to_config_string(&self) -> String {
        if self.continuous {
            return "continuous = true\n".to_string();
        }
        let mut out = String::from("continuous = false\n");
        for w in &self.sessions {
            out.push_str(&format!("session = {w}\n"));
        }
        for d in &self.holidays {
            out.push_str(&format!("holiday = {d}\n"));
        }
        out
    }
}

fn continuous_grid(
    frequency: Frequency,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> Vec<DateTime<Utc>> {
    // grid anchored at 00:00 UTC
    let day_start = Utc.from_utc_datetime(&start.date_naive().and_time(NaiveTime::MIN));
    let step = frequency.step();
    let mut t = day_start;
    if frequency == Frequency::Hourly {
        t += Duration::hours(i64::from(start.hour()));
    }
    while t < start {
        t += step;
    }
    let mut out = Vec::new();
    while t <= end {
        out.push(t);
        t += step;
    }
    out
}

fn local_to_utc(offset: FixedOffset, day: NaiveDate, time: NaiveTime) -> DateTime<Utc> {
    offset
        .from_local_datetime(&day.and_time(time))
        .single()
        .expect("fixed offsets are unambiguous")
        .with_timezone(&Utc)
}

fn strip_comment(raw: &str) -> &str {
    match raw.find('#') {
        Some(pos) => raw[..pos].trim(),
        None => raw.trim(),
    }
}

/// Per-market rule set.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    pub market_id: MarketId,
    pub universe: Vec<Instrument>,
    pub calendar: TradingCalendar,
    /// Shares per lot; `None` for markets traded in arbitrary units.
    pub lot_size: Option<u32>,
    pub quantity_granularity: QuantityGranularity,
    pub frequency: Frequency,
    pub baseline_symbol: String,
    /// Proportional fee charged on notional. Zero unless configured.
    pub fee_rate: f64,
    periods_per_year_override: Option<f64>,
}

impl MarketSpec {
    /// Builds a spec from a universe with market defaults. The cash
    /// instrument is appended.
    pub fn new(market_id: MarketId, symbols: Vec<String>) -> Self {
        let kind = match market_id {
            MarketId::Crypto => InstrumentKind::CryptoPair,
            _ => InstrumentKind::Equity,
        };
        let mut universe: Vec<Instrument> = symbols
            .into_iter()
            .map(|s| Instrument {
                display_name: s.clone(),
                symbol: s,
                kind,
            })
            .collect();
        universe.push(Instrument::cash());
        let (lot_size, quantity_granularity) = match market_id {
            MarketId::Us => (Some(1), QuantityGranularity::IntegerShares),
            MarketId::Ashare => (Some(100), QuantityGranularity::IntegerShares),
            MarketId::Crypto => (None, QuantityGranularity::Fractional),
        };
        let baseline_symbol = match market_id {
            MarketId::Us => "QQQ",
            MarketId::Ashare => "510050.SH",
            MarketId::Crypto => "CD5",
        }
        .to_string();
        MarketSpec {
            market_id,
            universe,
            calendar: TradingCalendar::default_for(market_id),
            lot_size,
            quantity_granularity,
            frequency: Frequency::Daily,
            baseline_symbol,
            fee_rate: 0.0,
            periods_per_year_override: None,
        }
    }

    pub fn with_frequency(mut self, frequency: Frequency) -> Self {
        self.frequency = frequency;
        self
    }

    pub fn with_calendar(mut self, calendar: TradingCalendar) -> Self {
        self.calendar = calendar;
        self
    }

    pub fn with_baseline(mut self, symbol: impl Into<String>) -> Self {
        self.baseline_symbol = symbol.into();
        self
    }

    pub fn with_fee_rate(mut self, fee_rate: f64) -> Self {
        self.fee_rate = fee_rate;
        self
    }

    pub fn with_periods_per_year(mut self, periods: f64) -> Self {
        self.periods_per_year_override = Some(periods);
        self
    }

    pub fn instrument(&self, symbol: &str) -> Option<&Instrument> {
        self.universe.iter().find(|i| i.symbol == symbol)
    }

    /// Non-cash symbols in universe order.
    pub fn tradable_symbols(&self) -> impl Iterator<Item = &str> {
        self.universe
            .iter()
            .filter(|i| !i.is_cash())
            .map(|i| i.symbol.as_str())
    }

    pub fn is_trading_time(&self, t: DateTime<Utc>) -> bool {
        self.calendar.is_open(t)
    }

    pub fn decision_times(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Vec<DateTime<Utc>> {
        self.calendar.decision_times(self.frequency, start, end)
    }

    pub fn is_decision_time(&self, t: DateTime<Utc>) -> bool {
        self.calendar.is_decision_time(self.frequency, t)
    }

    /// Annualization factor for the configured frequency.
    ///
    /// Daily: 252 for equities, 365 for crypto. Hourly: trading days times
    /// regular-session hours, so 1638 for the US (252 x 6.5), 1008 for
    /// A-shares (252 x 4) and 8760 for crypto (365 x 24).
    pub fn periods_per_year(&self) -> f64 {
        if let Some(p) = self.periods_per_year_override {
            return p;
        }
        let days = match self.market_id {
            MarketId::Crypto => TRADING_DAYS_CRYPTO,
            _ => TRADING_DAYS_EQUITY,
        };
        match self.frequency {
            Frequency::Daily => days,
            Frequency::Hourly => days * self.calendar.session_hours_per_day(),
        }
    }

    pub fn validate_quantity(&self, qty: f64) -> Result<(), QuantityViolation> {
        if !(qty > 0.0) || !qty.is_finite() {
            return Err(QuantityViolation::NonPositiveQuantity(qty));
        }
        if self.quantity_granularity == QuantityGranularity::IntegerShares && qty.fract() != 0.0 {
            return Err(QuantityViolation::FractionalQuantity(qty));
        }
        if let Some(lot) = self.lot_size {
            if self.quantity_granularity == QuantityGranularity::IntegerShares
                && qty % f64::from(lot) != 0.0
            {
                return Err(QuantityViolation::LotSizeViolation { qty, lot_size: lot });
            }
        }
        Ok(())
    }

    /// Largest legal quantity not exceeding `qty`, or `None` if even one lot
    /// (or any positive amount, for fractional markets) does not fit.
    pub fn round_down_quantity(&self, qty: f64) -> Option<f64> {
        if !(qty > 0.0) || !qty.is_finite() {
            return None;
        }
        let rounded = match (self.quantity_granularity, self.lot_size) {
            (QuantityGranularity::Fractional, _) => qty,
            (QuantityGranularity::IntegerShares, Some(lot)) => {
                let lot = f64::from(lot);
                (qty / lot).floor() * lot
            }
            (QuantityGranularity::IntegerShares, None) => qty.floor(),
        };
        (rounded > 0.0).then_some(rounded)
    }
}

pub fn is_trading_time(spec: &MarketSpec, t: DateTime<Utc>) -> bool {
    spec.is_trading_time(t)
}

pub fn validate_quantity(
    spec: &MarketSpec,
    _instrument: &Instrument,
    qty: f64,
) -> Result<(), QuantityViolation> {
    spec.validate_quantity(qty)
}

pub fn periods_per_year(spec: &MarketSpec) -> f64 {
    spec.periods_per_year()
}

/// Reads a universe file: one ticker per line, `#` starts a comment.
pub fn parse_universe(path: &Path, text: &str) -> Result<Vec<String>, MarketError> {
    let bad = |line: usize, reason: String| MarketError::MalformedUniverseFile {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut seen = HashSet::new();
    let mut symbols = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let symbol = strip_comment(raw);
        if symbol.is_empty() {
            continue;
        }
        if symbol.chars().any(char::is_whitespace) {
            return Err(bad(line_no, format!("'{symbol}' contains whitespace")));
        }
        if symbol.eq_ignore_ascii_case(CASH_SYMBOL) {
            return Err(bad(
                line_no,
                "CASH is reserved for the cash instrument".into(),
            ));
        }
        if !seen.insert(symbol.to_string()) {
            return Err(bad(line_no, format!("duplicate symbol '{symbol}'")));
        }
        symbols.push(symbol.to_string());
    }
    if symbols.is_empty() {
        return Err(bad(0, "universe is empty".into()));
    }
    Ok(symbols)
}

pub fn load_market_spec(
    market_id: MarketId,
    universe_file: &Path,
) -> Result<MarketSpec, MarketError> {
    let text = fs::read_to_string(universe_file).map_err(|e| MarketError::Io {
        path: universe_file.to_path_buf(),
        message: e.to_string(),
    })?;
    let symbols = parse_universe(universe_file, &text)?;
    Ok(MarketSpec::new(market_id, symbols))
}
