//! Line transport for a [`Session`] over any reader/writer pair (stdio, TCP).
//!
//! On connect the server writes one hello line that is not a response:
//!
//! ```text
//! {"hello":{"session":"s-0001","market":"us","clock":"2025-10-01T14:30:00Z","tool_budget":20}}
//! ```
//!
//! After that every non-empty input line gets exactly one response line. The
//! loop ends at EOF or once the final decision point has been closed.

use std::io::{self, BufRead, Write};

use serde_json::json;
use tracing::{debug, info};

use super::Session;
use crate::datastore::format_ts;

pub fn hello_line(session: &Session) -> String {
    json!({
        "hello": {
            "session": session.token(),
            "market": session.spec().market_id.as_str(),
            "clock": format_ts(&session.clock()),
            "tool_budget": session.config().tool_budget,
        }
    })
    .to_string()
}

/// Serves one session until the reader hits EOF or the session is done.
pub fn serve_session<R: BufRead, W: Write>(
    session: &mut Session,
    mut reader: R,
    mut writer: W,
) -> io::Result<()> {
    writeln!(writer, "{}", hello_line(session))?;
    writer.flush()?;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let resp = session.handle_line(line.trim_end_matches(['\r', '\n']));
        debug!(session = session.token(), id = resp.id, error = ?resp.error_code(), "handled");
        writeln!(writer, "{}", resp.to_line())?;
        writer.flush()?;
        if session.is_done() {
            break;
        }
    }
    info!(
        session = session.token(),
        decisions = session.records().len(),
        "connection finished"
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{parse_ts, ColumnMapping, StoreBuilder};
    use crate::market::{MarketId, MarketSpec};
    use crate::toolserver::{SessionConfig, ToolResponse};
    use std::sync::Arc;

    fn session() -> Session {
        let mut b = StoreBuilder::new();
        let text = "symbol,ts,open,high,low,close,volume
QQQ,2025-09-30T14:30:00Z,100,101,99,100,10
QQQ,2025-10-01T14:30:00Z,100,102,99,101,10
";
        b.ingest_bars_from_reader(text.as_bytes(), &ColumnMapping::default())
            .unwrap();
        let cfg = SessionConfig {
            spec: Arc::new(MarketSpec::new(MarketId::Us, vec!["QQQ".into()]).with_baseline("QQQ")),
            store: Arc::new(b.freeze()),
            start: parse_ts("2025-10-01T00:00:00Z").unwrap(),
            end: parse_ts("2025-10-01T23:00:00Z").unwrap(),
            initial_cash: 100.0,
            tool_budget: 20,
            config_digest: String::new(),
        };
        Session::open("s-0001", cfg).unwrap()
    }

    #[test]
    fn one_response_per_line() {
        let mut s = session();
        let input = "garbage\n\n{\"id\":1,\"session\":\"s-0001\",\"method\":\"observe\",\"params\":{}}\n{\"id\":2,\"session\":\"s-0001\",\"method\":\"stop\",\"params\":{}}\n";
        let mut out = Vec::new();
        serve_session(&mut s, input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let hello: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(hello["hello"]["session"], "s-0001");
        let r: ToolResponse = serde_json::from_str(lines[1]).unwrap();
        assert_eq!((r.id, r.error_code()), (0, Some("invalid_request")));
        let r: ToolResponse = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(r.id, 1);
        let r: ToolResponse = serde_json::from_str(lines[3]).unwrap();
        assert_eq!(r.result.unwrap()["done"], true);
        assert!(s.is_done());
    }
}
