//! `arena`: ingest market data, run scripted policies, serve the tool
//! protocol to external agents, and verify run reports.

use std::io::{self, BufReader};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tracing::{error, info, warn};
use tracing_subscriber::EnvFilter;

use arena_core::agent::PolicyKind;
use arena_core::datastore::{ColumnMapping, DataError, DataStore, StoreBuilder};
use arena_core::journal::{JournalError, SessionResult};
use arena_core::market::MarketError;
use arena_core::metrics::{render_table, RunReport};
use arena_core::report::{verify_run, ReportError};
use arena_core::runner::{
    compute_report, execute_run, write_report, write_run, RunConfig, RunError,
};
use arena_core::toolserver::transport::serve_session;
use arena_core::toolserver::{Session, SessionError};

#[derive(Parser)]
#[command(
    name = "arena",
    version,
    about = "Point-in-time evaluation of trading agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw bars and news and write a store image.
    Ingest {
        #[arg(long)]
        bars: PathBuf,
        #[arg(long)]
        news: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scripted policy over a config's window.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Store image from `arena ingest`; defaults to the config's data files.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// buy_and_hold, equal_weight, momentum, random or random:<seed>.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Serve the tool protocol, one session per connection.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Serve a single session on stdin/stdout instead of TCP.
        #[arg(long)]
        stdio: bool,
        /// Exit after this many sessions have finished.
        #[arg(long)]
        max_sessions: Option<usize>,
    },
    /// Verify run directories and print a comparison table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        /// Print reports as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let filter =
        EnvFilter::try_from_env("ARENA_LOG_LEVEL").unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .init();

    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { bars, news, out } => ingest(&bars, news.as_deref(), &out),
        Command::Run {
            config,
            store,
            out,
            seed,
            policy,
        } => run(&config, store.as_deref(), &out, seed, policy.as_deref()),
        Command::Serve {
            config,
            store,
            out,
            port,
            stdio,
            max_sessions,
        } => serve(&config, store.as_deref(), &out, port, stdio, max_sessions),
        Command::Report { runs, store, json } => report(&runs, store.as_deref(), json),
    }
}

const EXIT_MISSING_FILE: u8 = 2;
const EXIT_MALFORMED_DATA: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_COVERAGE_GAP: u8 = 5;
const EXIT_PORT_IN_USE: u8 = 6;
const EXIT_CORRUPT_LOG: u8 = 7;

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Io { .. } => EXIT_MISSING_FILE,
        _ => EXIT_MALFORMED_DATA,
    }
}

fn market_code(e: &MarketError) -> u8 {
    match e {
        MarketError::Io { .. } => EXIT_MISSING_FILE,
        MarketError::UnknownMarket(_) => EXIT_CONFIG,
        _ => EXIT_MALFORMED_DATA,
    }
}

fn journal_code(e: &JournalError) -> u8 {
    match e {
        JournalError::Io { .. } => EXIT_MISSING_FILE,
        JournalError::Corrupt { .. } => EXIT_CORRUPT_LOG,
    }
}

fn run_code(e: &RunError) -> u8 {
    match e {
        RunError::MissingFile { .. } => EXIT_MISSING_FILE,
        RunError::Config(_) | RunError::Agent(_) => EXIT_CONFIG,
        RunError::Market(m) => market_code(m),
        RunError::Data(d) => data_code(d),
        RunError::Session(SessionError::Config(_)) => EXIT_CONFIG,
        RunError::Session(SessionError::CoverageGap { .. }) => EXIT_COVERAGE_GAP,
        RunError::Journal(j) => journal_code(j),
        RunError::Metrics(_) => 1,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RunError>() {
            return run_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ReportError>() {
            return match e {
                ReportError::Journal(j) => journal_code(j),
                ReportError::Run(r) => run_code(r),
                ReportError::Integrity { .. } => EXIT_CORRUPT_LOG,
            };
        }
        if let Some(e) = cause.downcast_ref::<DataError>() {
            return data_code(e);
        }
        if let Some(e) = cause.downcast_ref::<SessionError>() {
            return match e {
                SessionError::Config(_) => EXIT_CONFIG,
                SessionError::CoverageGap { .. } => EXIT_COVERAGE_GAP,
            };
        }
        if let Some(e) = cause.downcast_ref::<io::Error>() {
            match e.kind() {
                io::ErrorKind::AddrInUse => return EXIT_PORT_IN_USE,
                io::ErrorKind::NotFound => return EXIT_MISSING_FILE,
                _ => {}
            }
        }
    }
    1
}

fn ingest(bars: &Path, news: Option<&Path>, out: &Path) -> Result<()> {
    let mut builder = StoreBuilder::new();
    let n = builder.ingest_bars(bars, &ColumnMapping::default())?;
    info!(bars = n, path = %bars.display(), "bars ingested");
    if let Some(news) = news {
        let counts = builder.ingest_corpus(news)?;
        info!(
            news = counts.news,
            documents = counts.documents,
            "corpus ingested"
        );
    }
    let manifest = builder.freeze().write_image(out)?;
    println!(
        "wrote {}: {} bars over {} symbols, {} news items, {} documents",
        out.display(),
        manifest.bars,
        manifest.symbols.len(),
        manifest.news,
        manifest.documents
    );
    Ok(())
}

fn load_store(cfg: &RunConfig, image: Option<&Path>) -> Result<DataStore, RunError> {
    match image {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(RunError::MissingFile {
                    path: dir.to_path_buf(),
                    message: "store image directory not found".into(),
                });
            }
            Ok(DataStore::load_image(dir)?)
        }
        None => cfg.build_store(),
    }
}

fn run(
    config: &Path,
    store: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    policy: Option<&str>,
) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(p) = policy {
        cfg.policy = PolicyKind::from_cli(p).map_err(RunError::Agent)?;
    }
    let store = Arc::new(load_store(&cfg, store)?);
    let outcome = execute_run(&cfg, store, out)?;
    println!("run written to {}", outcome.run_dir.display());
    match outcome.report {
        Some(r) => print!("{}", render_table(&[r])),
        None => warn!("window too short to score; no report written"),
    }
    Ok(())
}

fn serve(
    config: &Path,
    store: Option<&Path>,
    out: &Path,
    port: u16,
    stdio: bool,
    max_sessions: Option<usize>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let store = Arc::new(load_store(&cfg, store)?);
    let spec = cfg.market_spec()?;
    // fail on a bad window before accepting anyone
    cfg.session_config(spec.clone(), Arc::clone(&store))
        .schedule()?;

    let ctx = Arc::new(ServeContext {
        cfg,
        spec,
        store,
        out: out.to_path_buf(),
    });

    if stdio {
        let mut session = ctx.open("s-0001")?;
        let stdin = io::stdin();
        serve_session(&mut session, stdin.lock(), io::stdout().lock())?;
        return ctx.persist(session);
    }

    let listener = TcpListener::bind(("127.0.0.1", port))
        .with_context(|| format!("cannot listen on 127.0.0.1:{port}"))?;
    let addr = listener.local_addr()?;
    println!("listening on {addr}");
    info!(%addr, "tool server listening");

    let mut handles = Vec::new();
    for (n, stream) in listener.incoming().enumerate() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let token = format!("s-{:04}", n + 1);
        let ctx = Arc::clone(&ctx);
        handles.push(thread::spawn(move || {
            if let Err(e) = handle_connection(&ctx, &token, stream) {
                error!(session = %token, "{e:#}");
            }
        }));
        if max_sessions.is_some_and(|m| n + 1 >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

struct ServeContext {
    cfg: RunConfig,
    spec: arena_core::MarketSpec,
    store: Arc<DataStore>,
    out: PathBuf,
}

impl ServeContext {
    fn session_run_config(&self, token: &str) -> RunConfig {
        let mut cfg = self.cfg.clone();
        cfg.run_id = format!("{}-{token}", self.cfg.run_id);
        cfg
    }

    fn open(&self, token: &str) -> Result<Session> {
        let cfg = self.session_run_config(token);
        let session_cfg = cfg.session_config(self.spec.clone(), Arc::clone(&self.store));
        Ok(Session::open(token, session_cfg)?)
    }

    /// Writes the session's log to `<out>/<run_id>-<token>/`.
    fn persist(&self, session: Session) -> Result<()> {
        let token = session.token().to_string();
        let cfg = self.session_run_config(&token);
        let result: SessionResult = session.finish();
        if result.records.is_empty() {
            info!(session = %token, "no decisions made; nothing to write");
            return Ok(());
        }
        let dir = self.out.join(&cfg.run_id);
        write_run(&dir, &cfg, &self.store, &result)?;
        match compute_report(&cfg, &self.spec, &self.store, &result) {
            Ok(r) => write_report(&dir, &r)?,
            Err(e) => warn!(session = %token, "no report: {e}"),
        }
        info!(session = %token, dir = %dir.display(), decisions = result.records.len(), "session log written");
        Ok(())
    }
}

fn handle_connection(ctx: &ServeContext, token: &str, stream: TcpStream) -> Result<()> {
    let peer = stream.peer_addr().ok();
    info!(session = token, ?peer, "client connected");
    let mut session = ctx.open(token)?;
    let reader = BufReader::new(stream.try_clone()?);
    let outcome = serve_session(&mut session, reader, &stream);
    if let Err(e) = &outcome {
        warn!(session = token, "connection error: {e}");
    }
    ctx.persist(session)
}

fn report(runs: &[PathBuf], store: Option<&Path>, json: bool) -> Result<()> {
    let image = match store {
        Some(dir) => Some(DataStore::load_image(dir)?),
        None => None,
    };
    let mut reports: Vec<RunReport> = Vec::new();
    for dir in runs {
        let r = verify_run(dir, image.as_ref())
            .with_context(|| format!("verifying {}", dir.display()))?;
        reports.push(r);
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        print!("{}", render_table(&reports));
    }
    Ok(())
}
