use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn arena() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_arena"));
    c.env("ARENA_LOG_LEVEL", "warn");
    c
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copies a fixture config into `dir` with absolute data paths and edits.
fn config_with(dir: &Path, rel: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let src = fixtures().join(rel);
    let base = src.parent().unwrap();
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&src).unwrap()).unwrap();
    for key in ["universe_file", "calendar_file", "bars_path", "news_path"] {
        if let Some(p) = v.get(key).and_then(Value::as_str) {
            v[key] = json!(base.join(p).to_string_lossy());
        }
    }
    edit(&mut v);
    let path = dir.join("run.json");
    fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn ingest_then_run_from_image() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    let o = run(arena()
        .arg("ingest")
        .arg("--bars")
        .arg(fixtures().join("us/bars_daily.csv"))
        .arg("--news")
        .arg(fixtures().join("us/corpus.jsonl"))
        .arg("--out")
        .arg(&store));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.contains("bars over 6 symbols"), "{out}");

    let from_image = tmp.path().join("a");
    let from_files = tmp.path().join("b");
    for (dir, image) in [(&from_image, true), (&from_files, false)] {
        let mut cmd = arena();
        cmd.arg("run")
            .arg("--config")
            .arg(fixtures().join("us/run_daily.json"))
            .arg("--out")
            .arg(dir);
        if image {
            cmd.arg("--store").arg(&store);
        }
        let o = run(&mut cmd);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let read = |d: &Path| fs::read_to_string(d.join("us-daily/report.json")).unwrap();
    assert_eq!(read(&from_image), read(&from_files));
}

#[test]
fn ingest_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(arena()
        .args(["ingest", "--bars"])
        .arg(tmp.path().join("absent.csv"))
        .arg("--out")
        .arg(tmp.path().join("s")));
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).to_lowercase().contains("no such file"),
        "{}",
        stderr(&o)
    );

    let bad = tmp.path().join("bad.csv");
    fs::write(
        &bad,
        "symbol,ts,open,high,low,close,volume\nAAA,2025-10-01T14:30:00Z,1,2,0.5,1.5,10\nAAA,2025-10-02T14:30:00Z,1,abc,0.5,1.5,10\n",
    )
    .unwrap();
    let o = run(arena()
        .args(["ingest", "--bars"])
        .arg(&bad)
        .arg("--out")
        .arg(tmp.path().join("s")));
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
}

#[test]
fn run_config_and_coverage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_with(tmp.path(), "us/run_daily.json", |v| {
        v["window"]["start"] = json!("2025-08-01T00:00:00Z");
    });
    let o = run(arena()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path()));
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let o = run(arena()
        .arg("run")
        .arg("--config")
        .arg(tmp.path().join("nope.json")));
    assert_eq!(code(&o), 2);

    let cfg = config_with(tmp.path(), "us/run_daily.json", |v| {
        v["initial_cash"] = json!(-5)
    });
    let o = run(arena()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path()));
    assert_eq!(code(&o), 4);

    let o = run(arena()
        .arg("run")
        .arg("--config")
        .arg(fixtures().join("us/run_daily.json"))
        .args(["--policy", "oracle"])
        .arg("--out")
        .arg(tmp.path()));
    assert_eq!(code(&o), 4);

    // drop one baseline bar inside the window
    let text = fs::read_to_string(fixtures().join("us/bars_daily.csv")).unwrap();
    let holed: String = text
        .lines()
        .filter(|l| !l.starts_with("QQQ,2025-10-15"))
        .map(|l| format!("{l}\n"))
        .collect();
    let bars = tmp.path().join("holed.csv");
    fs::write(&bars, holed).unwrap();
    let cfg = config_with(tmp.path(), "us/run_daily.json", |v| {
        v["bars_path"] = json!(bars.to_string_lossy());
    });
    let o = run(arena()
        .arg("run")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path()));
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn report_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(arena()
        .arg("run")
        .arg("--config")
        .arg(fixtures().join("us/run_daily.json"))
        .args(["--policy", "random", "--seed", "5"])
        .arg("--out")
        .arg(tmp.path()));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dir = tmp.path().join("us-daily");

    let o = run(arena().arg("report").arg(&dir));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.lines().nth(1).unwrap().starts_with("CR (%)"));

    let equity = dir.join("equity.csv");
    let original = fs::read_to_string(&equity).unwrap();
    let tampered = original.replacen(",1", ",2", 1);
    assert_ne!(original, tampered);
    fs::write(&equity, tampered).unwrap();
    let o = run(arena().arg("report").arg(&dir));
    assert_eq!(code(&o), 7, "{}", stderr(&o));
    fs::write(&equity, &original).unwrap();

    let decisions = dir.join("decisions.jsonl");
    fs::write(&decisions, "{not json\n").unwrap();
    let o = run(arena().arg("report").arg(&dir));
    assert_eq!(code(&o), 7);

    let o = run(arena().arg("report").arg(tmp.path().join("missing")));
    assert_eq!(code(&o), 2);
}

struct Server {
    child: std::process::Child,
    addr: String,
}

fn start_server(out: &Path, max_sessions: usize) -> Server {
    let mut child = arena()
        .arg("serve")
        .arg("--config")
        .arg(fixtures().join("us/run_daily.json"))
        .args(["--port", "0", "--max-sessions", &max_sessions.to_string()])
        .arg("--out")
        .arg(out)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap()
        .to_string();
    Server { child, addr }
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    token: String,
    next_id: u64,
}

impl Client {
    fn connect(addr: &str) -> Client {
        let stream = TcpStream::connect(addr).unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut hello = String::new();
        reader.read_line(&mut hello).unwrap();
        let hello: Value = serde_json::from_str(&hello).unwrap();
        Client {
            reader,
            writer: stream,
            token: hello["hello"]["session"].as_str().unwrap().to_string(),
            next_id: 1,
        }
    }

    fn raw(&mut self, line: &str) -> Value {
        writeln!(self.writer, "{line}").unwrap();
        let mut resp = String::new();
        self.reader.read_line(&mut resp).unwrap();
        serde_json::from_str(&resp).unwrap()
    }

    fn call(&mut self, method: &str, params: Value) -> Value {
        let req =
            json!({"id": self.next_id, "session": self.token, "method": method, "params": params});
        self.next_id += 1;
        self.raw(&req.to_string())
    }
}

#[test]
fn serve_two_isolated_sessions() {
    let tmp = tempfile::tempdir().unwrap();
    let mut server = start_server(tmp.path(), 2);
    let mut a = Client::connect(&server.addr);
    let mut b = Client::connect(&server.addr);
    assert_ne!(a.token, b.token);

    let garbage = a.raw("this is not json");
    assert_eq!(garbage["id"], 0);
    assert_eq!(garbage["error"]["code"], "invalid_request");
    let obs = a.call("observe", json!({}));
    assert_eq!(obs["result"]["current_buy_prices"]["QQQ"], 500.0);

    let fill_a = a.call("trade", json!({"action":"buy","symbol":"AAPL","qty":3}));
    assert!(fill_a["result"]["fill"].is_object(), "{fill_a}");
    let fill_b = b.call("trade", json!({"action":"buy","symbol":"MSFT","qty":2}));
    assert!(fill_b["result"]["fill"].is_object(), "{fill_b}");
    assert!(b.call("observe", json!({}))["result"]["positions"]
        .get("AAPL")
        .is_none());

    let wrong = json!({"id": 99, "session": b.token, "method": "observe", "params": {}});
    assert_eq!(
        a.raw(&wrong.to_string())["error"]["code"],
        "session_not_found"
    );

    assert_eq!(a.call("stop", json!({}))["result"]["done"], false);
    assert_eq!(b.call("stop", json!({}))["result"]["done"], false);
    drop(a);
    drop(b);
    let status = server.child.wait().unwrap();
    assert!(status.success());

    let read = |token: &str| -> Vec<Value> {
        fs::read_to_string(tmp.path().join(format!("us-daily-{token}/decisions.jsonl")))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let (log_a, log_b) = (read("s-0001"), read("s-0002"));
    assert_eq!((log_a.len(), log_b.len()), (1, 1));
    assert_eq!(log_a[0]["fills"][0]["order"]["symbol"], "AAPL");
    assert_eq!(log_b[0]["fills"][0]["order"]["symbol"], "MSFT");
    assert_eq!(log_a[0]["fills"].as_array().unwrap().len(), 1);
    assert_eq!(log_b[0]["fills"].as_array().unwrap().len(), 1);
    assert_eq!(log_a[0]["end_positions"]["AAPL"], 3.0);
    assert!(log_b[0]["end_positions"].get("AAPL").is_none());
    assert!(log_a[0]["tool_trace"]
        .as_array()
        .unwrap()
        .iter()
        .all(|e| e["request"]["session"] == "s-0001"));
}

#[test]
fn serve_observe_stop_writes_one_empty_decision() {
    let tmp = tempfile::tempdir().unwrap();
    let mut server = start_server(tmp.path(), 1);
    let mut c = Client::connect(&server.addr);
    c.call("observe", json!({}));
    c.call("stop", json!({}));
    drop(c);
    assert!(server.child.wait().unwrap().success());
    let dir = tmp.path().join("us-daily-s-0001");
    let log = fs::read_to_string(dir.join("decisions.jsonl")).unwrap();
    let record: Value = serde_json::from_str(log.trim()).unwrap();
    assert_eq!(record["fills"], json!([]));
    assert_eq!(record["end_valuation"], 100000.0);
    assert_eq!(
        fs::read_to_string(dir.join("equity.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );
}

#[test]
fn serve_port_in_use() {
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port();
    let o = run(arena()
        .arg("serve")
        .arg("--config")
        .arg(fixtures().join("us/run_daily.json"))
        .args(["--port", &port.to_string()]));
    assert_eq!(code(&o), 6, "{}", stderr(&o));
}

#[test]
fn serve_stdio_full_window() {
    let tmp = tempfile::tempdir().unwrap();
    let mut child = arena()
        .arg("serve")
        .arg("--stdio")
        .arg("--config")
        .arg(fixtures().join("us/run_daily.json"))
        .arg("--out")
        .arg(tmp.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut input = String::new();
    input.push_str(&json!({"id":1,"session":"s-0001","method":"trade","params":{"action":"buy","symbol":"QQQ","qty":200}}).to_string());
    input.push('\n');
    for id in 2..=31 {
        input.push_str(&json!({"id":id,"session":"s-0001","method":"stop"}).to_string());
        input.push('\n');
    }
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 32);
    assert_eq!(lines[31]["result"]["done"], true);
    let dir = tmp.path().join("us-daily-s-0001");
    assert!(dir.join("report.json").exists());
    let o = run(arena().arg("report").arg(&dir));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
