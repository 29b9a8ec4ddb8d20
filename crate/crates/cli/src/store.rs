//! Snapshot-backed store: one engine behind one lock, written through to disk after
//! every mutation.

use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use parking_lot::Mutex;
use studyhook_core::{Engine, EngineConfig};

struct Inner {
    engine: Engine,
    /// Cycle events and deliveries already appended to the event log.
    written: (usize, usize),
}

pub struct Store {
    inner: Mutex<Inner>,
    path: Option<PathBuf>,
}

impl Store {
    pub fn in_memory(engine: Engine) -> Self {
        let written = engine.event_counts();
        Self { inner: Mutex::new(Inner { engine, written }), path: None }
    }

    /// Loads the snapshot at `path`, or starts empty from `config` when none exists yet.
    pub fn open(path: &Path, config: EngineConfig) -> anyhow::Result<Self> {
        let engine = if path.exists() {
            Engine::load(path).with_context(|| format!("loading {}", path.display()))?
        } else {
            Engine::new(config)?
        };
        let written = engine.event_counts();
        Ok(Self { inner: Mutex::new(Inner { engine, written }), path: Some(path.to_path_buf()) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn event_log_path(&self) -> Option<PathBuf> {
        self.path.as_ref().map(|p| {
            let mut name = p.as_os_str().to_owned();
            name.push(".events.jsonl");
            PathBuf::from(name)
        })
    }

    pub fn read<R>(&self, f: impl FnOnce(&Engine) -> R) -> R {
        f(&self.inner.lock().engine)
    }

    /// Runs `f` with exclusive access, then persists the snapshot and new events.
    pub fn write<R>(&self, f: impl FnOnce(&mut Engine) -> R) -> R {
        let mut inner = self.inner.lock();
        let out = f(&mut inner.engine);
        if let Err(e) = self.persist(&mut inner) {
            tracing::error!(error = %e, "persisting store failed");
        }
        out
    }

    /// Swaps in a whole engine, as for a snapshot import.
    pub fn replace(&self, engine: Engine) -> anyhow::Result<()> {
        let mut inner = self.inner.lock();
        inner.written = engine.event_counts();
        inner.engine = engine;
        self.persist(&mut inner)
    }

    fn persist(&self, inner: &mut Inner) -> anyhow::Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        inner.engine.save(path).with_context(|| format!("saving {}", path.display()))?;
        let (cycles, deliveries) = inner.written;
        let fresh = inner.engine.events_since(cycles, deliveries);
        if !fresh.is_empty() {
            let log = self.event_log_path().expect("path set");
            let file = OpenOptions::new().create(true).append(true).open(&log)?;
            let mut out = BufWriter::new(file);
            for record in &fresh {
                serde_json::to_writer(&mut out, record)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        inner.written = inner.engine.event_counts();
        Ok(())
    }
}
