//! Point-in-time store for bars, news and search documents.
//!
//! Loading happens through a [`StoreBuilder`]; [`StoreBuilder::freeze`] turns
//! it into an immutable [`DataStore`] which is the only type that answers
//! queries. Every query takes the simulated clock `t_now` and never returns a
//! record stamped after it.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const BARS_FILE: &str = "bars.csv";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate bar at row {row}: {symbol} @ {ts}")]
    DuplicateBar {
        row: usize,
        symbol: String,
        ts: DateTime<Utc>,
    },
    #[error("OHLC violation at row {row}: {reason}")]
    OhlcViolation { row: usize, reason: String },
    #[error("malformed record on line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate id '{id}' on line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("unknown symbol '{0}'")]
    UnknownSymbol(String),
    #[error("no data for {symbol} at or before {t_now}")]
    NoData {
        symbol: String,
        t_now: DateTime<Utc>,
    },
    #[error("query starts at {from}, after the current time {t_now}")]
    TemporalViolation {
        from: DateTime<Utc>,
        t_now: DateTime<Utc>,
    },
    #[error("invalid range: {from} is after {to}")]
    InvalidRange {
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    },
    #[error("limit must be at least 1")]
    InvalidLimit,
}

/// OHLCV record keyed by bar open time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub symbol: String,
    pub ts: DateTime<Utc>,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn check(&self) -> Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(format!(
                "{} @ {}: prices must be positive",
                self.symbol, self.ts
            ));
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!("{} @ {}: negative volume", self.symbol, self.ts));
        }
        let lo_body = self.open.min(self.close);
        let hi_body = self.open.max(self.close);
        if self.low > lo_body || hi_body > self.high {
            return Err(format!(
                "{} @ {}: need low <= min(open, close) <= max(open, close) <= high \
                 (o={} h={} l={} c={})",
                self.symbol, self.ts, self.open, self.high, self.low, self.close
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub published_at: DateTime<Utc>,
    #[serde(default)]
    pub symbols: Vec<String>,
    pub summary: String,
    #[serde(default)]
    pub sentiment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub ts: DateTime<Utc>,
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub source: String,
}

/// CSV header names for each bar field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMapping {
    pub symbol: String,
    pub ts: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            symbol: "symbol".into(),
            ts: "ts".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusCounts {
    pub news: usize,
    pub documents: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub bars: usize,
    pub news: usize,
    pub documents: usize,
    pub symbols: Vec<String>,
}

fn io_err(path: &Path, e: impl ToString) -> DataError {
    DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn parse_ts(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp '{s}': {e}"))
}

pub fn format_ts(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Mutable loading phase.
#[derive(Debug, Default)]
pub struct StoreBuilder {
    bars: BTreeMap<String, BTreeMap<DateTime<Utc>, Bar>>,
    news: BTreeMap<String, NewsItem>,
    documents: BTreeMap<String, Document>,
}

impl StoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest_bars(
        &mut self,
        path: &Path,
        mapping: &ColumnMapping,
    ) -> Result<usize, DataError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        self.ingest_bars_from_reader(file, mapping)
    }

    /// Loads bars from CSV. Data rows are numbered from 1 (the header is not
    /// counted). The whole file is validated before anything is inserted, so a
    /// failed ingest leaves the builder unchanged.
    pub fn ingest_bars_from_reader<R: Read>(
        &mut self,
        reader: R,
        mapping: &ColumnMapping,
    ) -> Result<usize, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| DataError::MalformedRow {
                row: 0,
                reason: e.to_string(),
            })?
            .clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MalformedRow {
                    row: 0,
                    reason: format!("missing column '{name}'"),
                })
        };
        let idx = [
            col(&mapping.symbol)?,
            col(&mapping.ts)?,
            col(&mapping.open)?,
            col(&mapping.high)?,
            col(&mapping.low)?,
            col(&mapping.close)?,
            col(&mapping.volume)?,
        ];

        let mut staged: Vec<(usize, Bar)> = Vec::new();
        let mut seen: HashSet<(String, DateTime<Utc>)> = HashSet::new();
        for (i, record) in rdr.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| DataError::MalformedRow {
                row,
                reason: e.to_string(),
            })?;
            let field = |k: usize| {
                record.get(idx[k]).ok_or_else(|| DataError::MalformedRow {
                    row,
                    reason: "missing field".into(),
                })
            };
            let num = |k: usize, name: &str| -> Result<f64, DataError> {
                let raw = field(k)?;
                raw.parse::<f64>().map_err(|_| DataError::MalformedRow {
                    row,
                    reason: format!("{name} '{raw}' is not a number"),
                })
            };
            let symbol = field(0)?.to_string();
            if symbol.is_empty() {
                return Err(DataError::MalformedRow {
                    row,
                    reason: "empty symbol".into(),
                });
            }
            let ts =
                parse_ts(field(1)?).map_err(|reason| DataError::MalformedRow { row, reason })?;
            let bar = Bar {
                symbol,
                ts,
                open: num(2, "open")?,
                high: num(3, "high")?,
                low: num(4, "low")?,
                close: num(5, "close")?,
                volume: num(6, "volume")?,
            };
            bar.check()
                .map_err(|reason| DataError::OhlcViolation { row, reason })?;
            let key = (bar.symbol.clone(), bar.ts);
            let exists = self
                .bars
                .get(&bar.symbol)
                .is_some_and(|m| m.contains_key(&bar.ts));
            if exists || !seen.insert(key) {
                return Err(DataError::DuplicateBar {
                    row,
                    symbol: bar.symbol,
                    ts: bar.ts,
                });
            }
            staged.push((row, bar));
        }

        let n = staged.len();
        for (_, bar) in staged {
            self.bars
                .entry(bar.symbol.clone())
                .or_default()
                .insert(bar.ts, bar);
        }
        Ok(n)
    }

    pub fn ingest_corpus(&mut self, path: &Path) -> Result<CorpusCounts, DataError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        self.ingest_corpus_from_reader(BufReader::new(file))
    }

    /// Loads news items and documents from JSON lines. A line with
    /// `published_at` is a news item; a line with `ts` is a document.
    /// Unknown fields are ignored. All-or-nothing like bar ingestion.
    pub fn ingest_corpus_from_reader<R: BufRead>(
        &mut self,
        reader: R,
    ) -> Result<CorpusCounts, DataError> {
        let mut news = Vec::new();
        let mut docs = Vec::new();
        let mut ids: HashSet<String> = HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| DataError::MalformedRecord {
                line: line_no,
                reason: e.to_string(),
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let bad = |reason: String| DataError::MalformedRecord {
                line: line_no,
                reason,
            };
            let value: Value = serde_json::from_str(trimmed).map_err(|e| bad(e.to_string()))?;
            let obj = value
                .as_object()
                .ok_or_else(|| bad("expected a JSON object".into()))?;
            let id = obj
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("missing string field 'id'".into()))?
                .to_string();
            let taken = self.news.contains_key(&id) || self.documents.contains_key(&id);
            if taken || !ids.insert(id.clone()) {
                return Err(DataError::DuplicateId { line: line_no, id });
            }
            if obj.contains_key("published_at") {
                let item: NewsItem =
                    serde_json::from_value(value.clone()).map_err(|e| bad(e.to_string()))?;
                if let Some(s) = item.sentiment {
                    if !(-1.0..=1.0).contains(&s) {
                        return Err(bad(format!("sentiment {s} outside [-1, 1]")));
                    }
                }
                news.push(item);
            } else if obj.contains_key("ts") {
                let doc: Document =
                    serde_json::from_value(value.clone()).map_err(|e| bad(e.to_string()))?;
                docs.push(doc);
            } else {
                return Err(bad("record has neither 'published_at' nor 'ts'".into()));
            }
        }
        let counts = CorpusCounts {
            news: news.len(),
            documents: docs.len(),
        };
        for n in news {
            self.news.insert(n.id.clone(), n);
        }
        for d in docs {
            self.documents.insert(d.id.clone(), d);
        }
        Ok(counts)
    }

    pub fn bar_count(&self) -> usize {
        self.bars.values().map(BTreeMap::len).sum()
    }

    pub fn freeze(self) -> DataStore {
        let bars = self
            .bars
            .into_iter()
            .map(|(sym, m)| (sym, m.into_values().collect()))
            .collect();

        let mut news: Vec<NewsItem> = self.news.into_values().collect();
        news.sort_by(|a, b| {
            (a.published_at, Reverse(&a.id)).cmp(&(b.published_at, Reverse(&b.id)))
        });

        let mut documents: Vec<IndexedDocument> = self
            .documents
            .into_values()
            .map(|doc| {
                let mut tokens = tokenize(&doc.title);
                tokens.extend(tokenize(&doc.body));
                IndexedDocument { doc, tokens }
            })
            .collect();
        documents
            .sort_by(|a, b| (a.doc.ts, Reverse(&a.doc.id)).cmp(&(b.doc.ts, Reverse(&b.doc.id))));

        DataStore {
            bars,
            news,
            documents,
        }
    }
}

fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone)]
struct IndexedDocument {
    doc: Document,
    tokens: BTreeSet<String>,
}

/// Frozen, read-only store. Share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct DataStore {
    bars: BTreeMap<String, Vec<Bar>>,
    // ascending by (time, reverse id); iterated backwards for newest-first
    news: Vec<NewsItem>,
    documents: Vec<IndexedDocument>,
}

impl DataStore {
    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.bars.keys().map(String::as_str)
    }

    pub fn has_symbol(&self, symbol: &str) -> bool {
        self.bars.contains_key(symbol)
    }

    fn series(&self, symbol: &str) -> Result<&[Bar], DataError> {
        self.bars
            .get(symbol)
            .map(Vec::as_slice)
            .ok_or_else(|| DataError::UnknownSymbol(symbol.to_string()))
    }

    /// Latest bar with `ts <= t_now`.
    pub fn price_at(&self, symbol: &str, t_now: DateTime<Utc>) -> Result<&Bar, DataError> {
        let bars = self.series(symbol)?;
        let n = bars.partition_point(|b| b.ts <= t_now);
        n.checked_sub(1)
            .map(|i| &bars[i])
            .ok_or_else(|| DataError::NoData {
                symbol: symbol.to_string(),
                t_now,
            })
    }

    /// Latest bar with `ts < t`.
    pub fn price_before(&self, symbol: &str, t: DateTime<Utc>) -> Result<&Bar, DataError> {
        let bars = self.series(symbol)?;
        let n = bars.partition_point(|b| b.ts < t);
        n.checked_sub(1)
            .map(|i| &bars[i])
            .ok_or_else(|| DataError::NoData {
                symbol: symbol.to_string(),
                t_now: t,
            })
    }

    /// The bar opening exactly at `t`, if any.
    pub fn bar_at(&self, symbol: &str, t: DateTime<Utc>) -> Option<&Bar> {
        let bars = self.bars.get(symbol)?;
        bars.binary_search_by(|b| b.ts.cmp(&t))
            .ok()
            .map(|i| &bars[i])
    }

    /// Bars with `from <= ts <= min(to, t_now)`, ascending.
    pub fn bars_range(
        &self,
        symbol: &str,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
        t_now: DateTime<Utc>,
    ) -> Result<&[Bar], DataError> {
        if from > to {
            return Err(DataError::InvalidRange { from, to });
        }
        let bars = self.series(symbol)?;
        if from > t_now {
            return Err(DataError::TemporalViolation { from, t_now });
        }
        let upper = to.min(t_now);
        let lo = bars.partition_point(|b| b.ts < from);
        let hi = bars.partition_point(|b| b.ts <= upper);
        Ok(&bars[lo..hi.max(lo)])
    }

    /// The `n` most recent bars with `ts < before`, ascending.
    pub fn bars_before(
        &self,
        symbol: &str,
        before: DateTime<Utc>,
        n: usize,
    ) -> Result<&[Bar], DataError> {
        let bars = self.series(symbol)?;
        let hi = bars.partition_point(|b| b.ts < before);
        Ok(&bars[hi.saturating_sub(n)..hi])
    }

    pub fn first_ts(&self, symbol: &str) -> Option<DateTime<Utc>> {
        self.bars.get(symbol)?.first().map(|b| b.ts)
    }

    pub fn last_ts(&self, symbol: &str) -> Option<DateTime<Utc>> {
        self.bars.get(symbol)?.last().map(|b| b.ts)
    }

    /// Documents whose title or body contain every query token
    /// (case-insensitive), newest first, ties broken by id.
    pub fn search_docs(
        &self,
        query: &str,
        t_now: DateTime<Utc>,
        limit: usize,
    ) -> Result<Vec<&Document>, DataError> {
        if limit == 0 {
            return Err(DataError::InvalidLimit);
        }
        let wanted = tokenize(query);
        if wanted.is_empty() {
            return Ok(Vec::new());
        }
        let visible = self.documents.partition_point(|d| d.doc.ts <= t_now);
        Ok(self.documents[..visible]
            .iter()
            .rev()
            .filter(|d| wanted.is_subset(&d.tokens))
            .take(limit)
            .map(|d| &d.doc)
            .collect())
    }

    /// News with `since < published_at <= t_now`, optionally tagged with
    /// `symbol`, newest first.
    pub fn news_query(
        &self,
        symbol: Option<&str>,
        since: Option<DateTime<Utc>>,
        t_now: DateTime<Utc>,
        limit: usize,
    ) -> Result<Vec<&NewsItem>, DataError> {
        if limit == 0 {
            return Err(DataError::InvalidLimit);
        }
        if let Some(since) = since {
            if since > t_now {
                return Err(DataError::TemporalViolation { from: since, t_now });
            }
        }
        let visible = self.news.partition_point(|n| n.published_at <= t_now);
        Ok(self.news[..visible]
            .iter()
            .rev()
            .take_while(|n| since.is_none_or(|s| n.published_at > s))
            .filter(|n| symbol.is_none_or(|s| n.symbols.iter().any(|x| x == s)))
            .take(limit)
            .collect())
    }

    pub fn manifest(&self) -> StoreManifest {
        StoreManifest {
            bars: self.bars.values().map(Vec::len).sum(),
            news: self.news.len(),
            documents: self.documents.len(),
            symbols: self.bars.keys().cloned().collect(),
        }
    }

    /// SHA-256 over every bar and corpus record in canonical order.
    pub fn content_digest(&self) -> String {
        let mut h = Sha256::new();
        for bar in self.bars.values().flatten() {
            h.update(
                format!(
                    "{},{},{},{},{},{},{}\n",
                    bar.symbol,
                    format_ts(&bar.ts),
                    bar.open,
                    bar.high,
                    bar.low,
                    bar.close,
                    bar.volume
                )
                .as_bytes(),
            );
        }
        for n in &self.news {
            h.update(
                serde_json::to_string(n)
                    .expect("news serializes")
                    .as_bytes(),
            );
            h.update(b"\n");
        }
        for d in &self.documents {
            h.update(
                serde_json::to_string(&d.doc)
                    .expect("documents serialize")
                    .as_bytes(),
            );
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Writes the store as a directory image readable by [`DataStore::load_image`].
    pub fn write_image(&self, dir: &Path) -> Result<StoreManifest, DataError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

        let bars_path = dir.join(BARS_FILE);
        let file = File::create(&bars_path).map_err(|e| io_err(&bars_path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["symbol", "ts", "open", "high", "low", "close", "volume"])
            .map_err(|e| io_err(&bars_path, e))?;
        for bar in self.bars.values().flatten() {
            w.write_record([
                bar.symbol.clone(),
                format_ts(&bar.ts),
                bar.open.to_string(),
                bar.high.to_string(),
                bar.low.to_string(),
                bar.close.to_string(),
                bar.volume.to_string(),
            ])
            .map_err(|e| io_err(&bars_path, e))?;
        }
        w.flush().map_err(|e| io_err(&bars_path, e))?;

        let corpus_path = dir.join(CORPUS_FILE);
        let file = File::create(&corpus_path).map_err(|e| io_err(&corpus_path, e))?;
        let mut w = BufWriter::new(file);
        for n in &self.news {
            let line = serde_json::to_string(n).map_err(|e| io_err(&corpus_path, e))?;
            writeln!(w, "{line}").map_err(|e| io_err(&corpus_path, e))?;
        }
        for d in &self.documents {
            let line = serde_json::to_string(&d.doc).map_err(|e| io_err(&corpus_path, e))?;
            writeln!(w, "{line}").map_err(|e| io_err(&corpus_path, e))?;
        }
        w.flush().map_err(|e| io_err(&corpus_path, e))?;

        let manifest = self.manifest();
        let manifest_path = dir.join(MANIFEST_FILE);
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&manifest_path, e))?;
        fs::write(&manifest_path, text + "\n").map_err(|e| io_err(&manifest_path, e))?;
        Ok(manifest)
    }

    pub fn load_image(dir: &Path) -> Result<DataStore, DataError> {
        let mut builder = StoreBuilder::new();
        builder.ingest_bars(&dir.join(BARS_FILE), &ColumnMapping::default())?;
        let corpus = dir.join(CORPUS_FILE);
        if corpus.exists() {
            builder.ingest_corpus(&corpus)?;
        }
        Ok(builder.freeze())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BARS: &str = "symbol,ts,open,high,low,close,volume
AAPL,2025-10-01T13:30:00Z,100,102,99,101,1000
AAPL,2025-10-02T13:30:00Z,101,103,100,102,1100
AAPL,2025-10-03T13:30:00Z,102,104,101,103,1200
MSFT,2025-10-01T13:30:00Z,400,405,398,402,500
MSFT,2025-10-02T13:30:00Z,402,406,401,405,600
";

    fn utc(s: &str) -> DateTime<Utc> {
        parse_ts(s).unwrap()
    }

    fn store() -> DataStore {
        let mut b = StoreBuilder::new();
        assert_eq!(
            b.ingest_bars_from_reader(BARS.as_bytes(), &ColumnMapping::default())
                .unwrap(),
            5
        );
        let corpus = r#"{"id":"n1","published_at":"2025-10-01T12:00:00Z","symbols":["AAPL"],"summary":"Apple up","sentiment":0.4}
{"id":"n2","published_at":"2025-10-02T12:00:00Z","symbols":["MSFT"],"summary":"Microsoft flat"}
{"id":"n3","published_at":"2025-10-03T12:00:00Z","symbols":[],"summary":"Macro data","extra":1}
{"id":"d1","ts":"2025-10-01T00:00:00Z","title":"Apple earnings","body":"Revenue beat","source":"wire"}
{"id":"d2","ts":"2025-10-02T00:00:00Z","title":"Chip demand","body":"apple and nvidia","source":"blog"}
{"id":"d3","ts":"2025-10-05T00:00:00Z","title":"Apple future","body":"future leak","source":"wire"}
"#;
        let counts = b.ingest_corpus_from_reader(corpus.as_bytes()).unwrap();
        assert_eq!(
            counts,
            CorpusCounts {
                news: 3,
                documents: 3
            }
        );
        b.freeze()
    }

    #[test]
    fn ohlc_violation_reports_row() {
        let bad = "symbol,ts,open,high,low,close,volume
A,2025-10-01T00:00:00Z,1,2,1,1,0
A,2025-10-02T00:00:00Z,1,2,1,1,0
A,2025-10-03T00:00:00Z,1,1,2,1,0
";
        let mut b = StoreBuilder::new();
        let err = b
            .ingest_bars_from_reader(bad.as_bytes(), &ColumnMapping::default())
            .unwrap_err();
        assert!(
            matches!(err, DataError::OhlcViolation { row: 3, .. }),
            "{err:?}"
        );
        assert_eq!(b.bar_count(), 0);
    }

    #[test]
    fn malformed_rows() {
        let mut b = StoreBuilder::new();
        let text = "symbol,ts,open,high,low,close,volume\nA,2025-10-01T00:00:00Z,x,2,1,1,0\n";
        assert!(matches!(
            b.ingest_bars_from_reader(text.as_bytes(), &ColumnMapping::default()),
            Err(DataError::MalformedRow { row: 1, .. })
        ));
        let text = "symbol,ts,open,high,low,close,volume\nA,yesterday,1,2,1,1,0\n";
        assert!(matches!(
            b.ingest_bars_from_reader(text.as_bytes(), &ColumnMapping::default()),
            Err(DataError::MalformedRow { row: 1, .. })
        ));
        let text = "symbol,ts,open,high,low,close\nA,2025-10-01T00:00:00Z,1,2,1,1\n";
        assert!(matches!(
            b.ingest_bars_from_reader(text.as_bytes(), &ColumnMapping::default()),
            Err(DataError::MalformedRow { row: 0, .. })
        ));
    }

    #[test]
    fn reingest_is_rejected_and_leaves_store_unchanged() {
        let mut b = StoreBuilder::new();
        b.ingest_bars_from_reader(BARS.as_bytes(), &ColumnMapping::default())
            .unwrap();
        let err = b
            .ingest_bars_from_reader(BARS.as_bytes(), &ColumnMapping::default())
            .unwrap_err();
        assert!(matches!(err, DataError::DuplicateBar { row: 1, .. }));
        assert_eq!(b.bar_count(), 5);
    }

    #[test]
    fn custom_column_mapping() {
        let text = "Ticker,Time,O,H,L,C,V\nA,2025-10-01T00:00:00Z,1,2,1,1.5,10\n";
        let mapping = ColumnMapping {
            symbol: "Ticker".into(),
            ts: "Time".into(),
            open: "O".into(),
            high: "H".into(),
            low: "L".into(),
            close: "C".into(),
            volume: "V".into(),
        };
        let mut b = StoreBuilder::new();
        assert_eq!(
            b.ingest_bars_from_reader(text.as_bytes(), &mapping)
                .unwrap(),
            1
        );
        let s = b.freeze();
        assert_eq!(
            s.price_at("A", utc("2025-10-02T00:00:00Z")).unwrap().close,
            1.5
        );
    }

    #[test]
    fn price_lookups() {
        let s = store();
        let hit = s.price_at("AAPL", utc("2025-10-02T13:30:00Z")).unwrap();
        assert_eq!(hit.close, 102.0);
        let mid = s.price_at("AAPL", utc("2025-10-02T20:00:00Z")).unwrap();
        assert_eq!(mid.ts, utc("2025-10-02T13:30:00Z"));
        assert!(matches!(
            s.price_at("AAPL", utc("2025-09-30T00:00:00Z")),
            Err(DataError::NoData { .. })
        ));
        assert!(matches!(
            s.price_at("TSLA", utc("2025-10-02T00:00:00Z")),
            Err(DataError::UnknownSymbol(_))
        ));
        let before = s.price_before("AAPL", utc("2025-10-02T13:30:00Z")).unwrap();
        assert_eq!(before.ts, utc("2025-10-01T13:30:00Z"));
        assert!(s.bar_at("AAPL", utc("2025-10-02T13:30:00Z")).is_some());
        assert!(s.bar_at("AAPL", utc("2025-10-02T13:31:00Z")).is_none());
    }

    #[test]
    fn range_is_clamped_to_clock() {
        let s = store();
        let all = s
            .bars_range(
                "AAPL",
                utc("2025-10-01T00:00:00Z"),
                utc("2025-10-03T23:00:00Z"),
                utc("2025-10-03T13:30:00Z"),
            )
            .unwrap();
        assert_eq!(all.len(), 3);
        let cut = s
            .bars_range(
                "AAPL",
                utc("2025-10-01T00:00:00Z"),
                utc("2025-10-09T00:00:00Z"),
                utc("2025-10-02T14:00:00Z"),
            )
            .unwrap();
        assert_eq!(cut.len(), 2);
        assert!(matches!(
            s.bars_range(
                "AAPL",
                utc("2025-10-03T00:00:00Z"),
                utc("2025-10-04T00:00:00Z"),
                utc("2025-10-02T00:00:00Z")
            ),
            Err(DataError::TemporalViolation { .. })
        ));
        assert!(matches!(
            s.bars_range(
                "AAPL",
                utc("2025-10-03T00:00:00Z"),
                utc("2025-10-01T00:00:00Z"),
                utc("2025-10-05T00:00:00Z")
            ),
            Err(DataError::InvalidRange { .. })
        ));
        let prior = s
            .bars_before("AAPL", utc("2025-10-03T13:30:00Z"), 5)
            .unwrap();
        assert_eq!(prior.len(), 2);
    }

    #[test]
    fn search_is_clamped_and_ordered() {
        let s = store();
        let t = utc("2025-10-03T00:00:00Z");
        assert!(s.search_docs("tesla", t, 10).unwrap().is_empty());
        assert!(s.search_docs("future", t, 10).unwrap().is_empty());
        let hits = s.search_docs("APPLE", t, 10).unwrap();
        let ids: Vec<_> = hits.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["d2", "d1"]);
        assert_eq!(s.search_docs("apple", t, 1).unwrap()[0].id, "d2");
        assert_eq!(s.search_docs("apple revenue", t, 10).unwrap().len(), 1);
        assert!(s.search_docs("  ", t, 10).unwrap().is_empty());
        assert_eq!(s.search_docs("apple", t, 0), Err(DataError::InvalidLimit));
    }

    #[test]
    fn news_window_semantics() {
        let s = store();
        assert!(s
            .news_query(None, None, utc("2025-09-01T00:00:00Z"), 10)
            .unwrap()
            .is_empty());
        let aapl = s
            .news_query(Some("AAPL"), None, utc("2025-10-02T12:00:00Z"), 5)
            .unwrap();
        assert_eq!(aapl.len(), 1);
        assert_eq!(aapl[0].sentiment, Some(0.4));
        // since is exclusive, t_now inclusive
        let since = s
            .news_query(
                None,
                Some(utc("2025-10-01T12:00:00Z")),
                utc("2025-10-02T12:00:00Z"),
                5,
            )
            .unwrap();
        assert_eq!(since.len(), 1);
        assert_eq!(since[0].id, "n2");
        assert!(matches!(
            s.news_query(
                None,
                Some(utc("2025-10-05T00:00:00Z")),
                utc("2025-10-02T00:00:00Z"),
                5
            ),
            Err(DataError::TemporalViolation { .. })
        ));
    }

    #[test]
    fn corpus_errors() {
        let mut b = StoreBuilder::new();
        let dup = "{\"id\":\"a\",\"ts\":\"2025-01-01T00:00:00Z\",\"title\":\"t\"}\n{\"id\":\"a\",\"published_at\":\"2025-01-01T00:00:00Z\",\"summary\":\"s\"}\n";
        assert!(matches!(
            b.ingest_corpus_from_reader(dup.as_bytes()),
            Err(DataError::DuplicateId { line: 2, .. })
        ));
        let bad_sent = "{\"id\":\"a\",\"published_at\":\"2025-01-01T00:00:00Z\",\"summary\":\"s\",\"sentiment\":3}\n";
        assert!(b.ingest_corpus_from_reader(bad_sent.as_bytes()).is_err());
        assert!(b.ingest_corpus_from_reader("[1,2]\n".as_bytes()).is_err());
        assert!(b
            .ingest_corpus_from_reader("{\"id\":\"x\"}\n".as_bytes())
            .is_err());
        assert_eq!(b.freeze().manifest().news, 0);
    }

    #[test]
    fn image_roundtrip() {
        let s = store();
        let dir = tempfile::tempdir().unwrap();
        let m = s.write_image(dir.path()).unwrap();
        assert_eq!(m.bars, 5);
        let back = DataStore::load_image(dir.path()).unwrap();
        assert_eq!(back.manifest(), m);
        let t = utc("2025-10-09T00:00:00Z");
        assert_eq!(
            back.price_at("MSFT", t).unwrap(),
            s.price_at("MSFT", t).unwrap()
        );
        assert_eq!(
            back.search_docs("apple", t, 10).unwrap(),
            s.search_docs("apple", t, 10).unwrap()
        );
    }
}
