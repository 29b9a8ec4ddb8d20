use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use studyhook_cli::api::{router, run_dispatcher, AppState};
use studyhook_cli::store::Store;
use studyhook_core::domain::SystemClock;
use studyhook_core::sim::{default_profiles, default_student_id, populate, semester_start, simulate, StudentProfile};
use studyhook_core::{ClassId, EngineConfig, StudentId};

#[derive(Parser)]
#[command(name = "studyhook", version, about = "Study-habit engine service and operator tools")]
struct Cli {
    /// Engine configuration (JSON); defaults apply when omitted.
    #[arg(long, global = true, env = "STUDYHOOK_CONFIG")]
    config: Option<PathBuf>,
    /// Snapshot file backing the store.
    #[arg(long, global = true, env = "STUDYHOOK_STORE", default_value = "studyhook-store.json")]
    store: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API and the background dispatcher.
    Serve {
        #[arg(long, env = "STUDYHOOK_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "STUDYHOOK_BIND", default_value = "127.0.0.1")]
        bind: String,
        /// Static bearer token; no auth when unset.
        #[arg(long, env = "STUDYHOOK_TOKEN")]
        token: Option<String>,
        /// Longest pause between dispatcher ticks, in seconds.
        #[arg(long, default_value_t = 30)]
        tick_seconds: u64,
    },
    /// Replace the store with N onboarded synthetic students.
    Seed {
        #[arg(long, default_value_t = 30)]
        students: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        weeks: u32,
    },
    /// Load test results from a JSON-lines file.
    IngestTtm { file: PathBuf },
    /// Pair a class roster for peer explanation on one topic.
    Pair {
        #[arg(long)]
        class: String,
        #[arg(long)]
        topic: String,
    },
    /// Run the synthetic-student simulation and print metrics JSON.
    Simulate {
        #[arg(long, default_value_t = 12)]
        weeks: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON array of student profiles.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Synthetic profiles to generate when no file is given.
        #[arg(long, default_value_t = 30)]
        students: usize,
        /// Fire every trigger regardless of the gate.
        #[arg(long)]
        no_gate: bool,
    },
    /// Print one student's report.
    Report {
        #[arg(long)]
        student: String,
    },
}

fn load_config(path: Option<&Path>) -> anyhow::Result<EngineConfig> {
    match path {
        Some(p) => Ok(EngineConfig::load(p)?),
        None => Ok(EngineConfig::default()),
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn existing_store(path: &Path, config: EngineConfig) -> anyhow::Result<Store> {
    if !path.exists() {
        bail!("no store at {}; run `seed` or `serve` first", path.display());
    }
    Store::open(path, config)
}

async fn serve(store: Store, port: u16, bind: &str, token: Option<String>, tick: Duration) -> anyhow::Result<()> {
    let state = Arc::new(AppState { store: Arc::new(store), clock: Arc::new(SystemClock), token });
    let addr: SocketAddr = format!("{bind}:{port}").parse().context("bind address")?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "listening");
    tokio::spawn(run_dispatcher(state.clone(), tick));
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Serve { port, bind, token, tick_seconds } => {
            let store = Store::open(&cli.store, config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(store, port, &bind, token, Duration::from_secs(tick_seconds.max(1))))
        }
        Command::Seed { students, seed, weeks } => {
            if cli.store.exists() {
                std::fs::remove_file(&cli.store).with_context(|| format!("replacing {}", cli.store.display()))?;
            }
            let mut config = config;
            config.seed = seed;
            let engine = studyhook_core::Engine::new(config)?;
            let store = Store::in_memory(engine);
            let ids: Vec<StudentId> = (0..students).map(default_student_id).collect();
            store.write(|e| populate(e, &ids, weeks, seed, semester_start()))?;
            store.read(|e| e.save(&cli.store))?;
            print_json(&serde_json::json!({ "store": cli.store, "students": students, "seed": seed }))
        }
        Command::IngestTtm { file } => {
            let store = existing_store(&cli.store, config)?;
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let report = store.write(|e| e.ingest_ttm_jsonl(&text));
            print_json(&report)
        }
        Command::Pair { class, topic } => {
            let store = existing_store(&cli.store, config)?;
            let class = ClassId::new(class)?;
            let now = chrono::Utc::now();
            let summary = store.write(|e| e.pair(&class, &topic, now))?;
            print_json(&summary)
        }
        Command::Simulate { weeks, seed, profiles, students, no_gate } => {
            let profiles: Vec<StudentProfile> = match profiles {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => default_profiles(students, seed),
            };
            let mut config = config;
            if no_gate {
                config.notifier.gate_enabled = false;
            }
            print_json(&simulate(&profiles, weeks, seed, config)?)
        }
        Command::Report { student } => {
            let store = existing_store(&cli.store, config)?;
            let id = StudentId::new(student)?;
            print_json(&store.read(|e| e.report(&id))?)
        }
    }
}

fn main() -> std::process::ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
