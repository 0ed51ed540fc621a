use std::path::PathBuf;
use std::sync::Arc;

use arena_core::datastore::parse_ts;
use arena_core::report::verify_run;
use arena_core::runner::{execute_run, RunConfig};
use arena_core::toolserver::Session;
use chrono::{Datelike, NaiveDate};
use serde_json::json;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(rel)
}

const CONFIGS: [&str; 4] = [
    "us/run_daily.json",
    "us/run_hourly.json",
    "ashare/run_daily.json",
    "crypto/run_daily.json",
];

#[test]
fn every_fixture_runs_and_verifies() {
    let out = tempfile::tempdir().unwrap();
    for rel in CONFIGS {
        let cfg = RunConfig::load(&fixture(rel)).unwrap();
        let store = Arc::new(cfg.build_store().unwrap());
        let outcome = execute_run(&cfg, Arc::clone(&store), out.path()).unwrap();
        let report = outcome
            .report
            .expect("fixture windows are long enough to score");
        assert_eq!(
            verify_run(&outcome.run_dir, Some(&store)).unwrap(),
            report,
            "{rel}"
        );
        assert!(
            outcome.result.records.iter().all(|r| r.faults.is_empty()),
            "{rel}"
        );
    }
}

#[test]
fn annualization_per_market() {
    let ppy = |rel: &str| {
        RunConfig::load(&fixture(rel))
            .unwrap()
            .market_spec()
            .unwrap()
            .periods_per_year()
    };
    assert_eq!(ppy("us/run_daily.json"), 252.0);
    assert_eq!(ppy("us/run_hourly.json"), 1638.0);
    assert_eq!(ppy("ashare/run_daily.json"), 252.0);
    assert_eq!(ppy("crypto/run_daily.json"), 365.0);
}

#[test]
fn ashare_schedule_skips_golden_week() {
    let cfg = RunConfig::load(&fixture("ashare/run_daily.json")).unwrap();
    let store = Arc::new(cfg.build_store().unwrap());
    let session =
        Session::open("a", cfg.session_config(cfg.market_spec().unwrap(), store)).unwrap();
    let days: Vec<NaiveDate> = session.schedule().iter().map(|t| t.date_naive()).collect();
    assert_eq!(days.len(), 30);
    assert!(days.iter().all(|d| d.weekday().num_days_from_monday() < 5));
    assert!(!days.iter().any(|d| d.month() == 10 && d.day() <= 8));
    // 09:30 in Shanghai
    assert!(session
        .schedule()
        .iter()
        .all(|t| t.format("%H:%M").to_string() == "01:30"));
}

#[test]
fn us_schedule_has_thirty_decisions_and_newco_gap() {
    let cfg = RunConfig::load(&fixture("us/run_daily.json")).unwrap();
    let store = Arc::new(cfg.build_store().unwrap());
    let mut session =
        Session::open("u", cfg.session_config(cfg.market_spec().unwrap(), store)).unwrap();
    assert_eq!(session.schedule().len(), 30);
    assert_eq!(session.clock(), parse_ts("2025-10-01T14:30:00Z").unwrap());

    let obs = session.observation();
    assert_eq!(obs.current_buy_prices["QQQ"], 500.0);
    assert_eq!(obs.previous_close_prices["QQQ"], 497.9);
    assert_eq!(obs.gaps, vec!["NEWCO".to_string()]);

    let req = session.request("trade", json!({"action":"buy","symbol":"NEWCO","qty":1}));
    assert_eq!(session.handle(&req).error_code(), Some("no_data"));
    let req = session.request("check_price", json!({"symbol":"NEWCO"}));
    assert_eq!(session.handle(&req).error_code(), Some("no_data"));
}

#[test]
fn window_outside_data_is_a_config_error() {
    let mut cfg = RunConfig::load(&fixture("us/run_daily.json")).unwrap();
    cfg.window.start = parse_ts("2025-09-01T00:00:00Z").unwrap();
    let store = Arc::new(cfg.build_store().unwrap());
    let out = tempfile::tempdir().unwrap();
    assert!(matches!(
        execute_run(&cfg, store, out.path()),
        Err(arena_core::runner::RunError::Session(
            arena_core::toolserver::SessionError::Config(_)
        ))
    ));
}
