//! Long-running assessment service: watches the snapshot inbox, runs one
//! cycle at a time, persists reports to the archive and serves the HTTP API.

mod api;
pub mod inbox;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;
use tokio::sync::{oneshot, Semaphore};

use gridsa_core::analytics::{ArchiveError, CaseArchive};
use gridsa_core::engine::{assess, ConfigError, EngineConfig};

pub use api::router;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("archive {path}: {source}")]
    Archive { path: PathBuf, source: ArchiveError },
    #[error("inbox {path}: {source}")]
    Inbox { path: PathBuf, source: std::io::Error },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("runtime: {0}")]
    Runtime(std::io::Error),
}

impl ServerError {
    /// Process exit status: 2 for configuration and startup problems, 3 when
    /// the listen address is unavailable.
    pub fn exit_code(&self) -> i32 {
        match self {
            ServerError::Bind { .. } => 3,
            ServerError::Runtime(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LoopStatus {
    pub cycles_run: u64,
    pub in_flight: Option<i64>,
    pub last_error: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    pub cfg: Arc<EngineConfig>,
    pub archive: Arc<RwLock<CaseArchive>>,
    pub whatif_slots: Arc<Semaphore>,
    pub status: Arc<Mutex<LoopStatus>>,
}

impl AppState {
    pub fn new(cfg: EngineConfig, archive: CaseArchive) -> Self {
        Self {
            whatif_slots: Arc::new(Semaphore::new(cfg.whatif_concurrency)),
            cfg: Arc::new(cfg),
            archive: Arc::new(RwLock::new(archive)),
            status: Arc::new(Mutex::new(LoopStatus::default())),
        }
    }

    fn note_error(&self, msg: String) {
        tracing::warn!("{msg}");
        self.status.lock().unwrap_or_else(|e| e.into_inner()).last_error = Some(msg);
    }
}

fn process(state: &AppState, pending: inbox::Pending) {
    let inbox_dir = &state.cfg.inbox;
    let snap = pending.snapshot;
    let ts = snap.timestamp;
    let latest = state
        .archive
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .latest()
        .map(|r| r.snapshot_ts);
    if let Some(last) = latest.filter(|&l| ts <= l) {
        let reason = format!("snapshot {ts} is not newer than the latest cycle {last}");
        if let Err(e) = inbox::reject(inbox_dir, &pending.path, &reason) {
            state.note_error(format!("inbox: {e}"));
        }
        state.note_error(reason);
        return;
    }
    state.status.lock().unwrap_or_else(|e| e.into_inner()).in_flight = Some(ts);
    tracing::info!(ts, "cycle started");
    let outcome = assess(&snap, &state.cfg).map_err(|e| e.to_string()).and_then(|report| {
        let mut archive = state.archive.write().unwrap_or_else(|e| e.into_inner());
        archive
            .append(report, Some(&snap))
            .map_err(|e| format!("archive: {e}"))
    });
    {
        let mut st = state.status.lock().unwrap_or_else(|e| e.into_inner());
        st.in_flight = None;
        if outcome.is_ok() {
            st.cycles_run += 1;
        }
    }
    let filed = match outcome {
        Ok(()) => {
            tracing::info!(ts, "cycle persisted");
            inbox::file_away(inbox_dir, &pending.path, inbox::PROCESSED).map(|_| ())
        }
        Err(reason) => {
            state.note_error(format!("cycle {ts}: {reason}"));
            inbox::reject(inbox_dir, &pending.path, &reason)
        }
    };
    if let Err(e) = filed {
        state.note_error(format!("inbox: {e}"));
    }
}

fn orchestrate(state: AppState, stop: Arc<AtomicBool>) {
    let poll = Duration::from_secs_f64(state.cfg.inbox_poll_s);
    while !stop.load(Ordering::SeqCst) {
        match inbox::take_newest(&state.cfg.inbox) {
            Ok(Some(p)) => {
                process(&state, p);
                continue;
            }
            Ok(None) => {}
            Err(e) => state.note_error(format!("inbox scan: {e}")),
        }
        let until = Instant::now() + poll;
        while !stop.load(Ordering::SeqCst) && Instant::now() < until {
            std::thread::sleep(poll.min(Duration::from_millis(25)));
        }
    }
}

/// A started service; dropping it without [`Server::shutdown`] leaves the
/// service running until the process exits.
pub struct Server {
    addr: SocketAddr,
    state: AppState,
    trigger: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<(), ServerError>>>,
}

impl Server {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    /// Stops accepting requests, lets the in-flight cycle finish and waits.
    pub fn shutdown(mut self) -> Result<(), ServerError> {
        if let Some(t) = self.trigger.take() {
            let _ = t.send(());
        }
        self.wait()
    }

    pub fn wait(mut self) -> Result<(), ServerError> {
        match self.thread.take() {
            Some(h) => h.join().unwrap_or_else(|_| {
                Err(ServerError::Runtime(std::io::Error::other("service thread panicked")))
            }),
            None => Ok(()),
        }
    }
}

/// Opens the archive, binds the listener and starts the inbox loop and the
/// HTTP API. Stops when `shutdown` resolves or [`Server::shutdown`] is called.
pub fn start_with<F>(cfg: EngineConfig, shutdown: F) -> Result<Server, ServerError>
where
    F: Future<Output = ()> + Send + 'static,
{
    cfg.validate()?;
    let addr = cfg.listen_addr()?;
    std::fs::create_dir_all(&cfg.inbox).map_err(|source| ServerError::Inbox {
        path: cfg.inbox.clone(),
        source,
    })?;
    let archive = CaseArchive::open(&cfg.archive).map_err(|source| ServerError::Archive {
        path: cfg.archive.clone(),
        source,
    })?;
    let listener = std::net::TcpListener::bind(addr).map_err(|source| ServerError::Bind { addr, source })?;
    let bound = listener.local_addr().map_err(ServerError::Runtime)?;
    listener.set_nonblocking(true).map_err(ServerError::Runtime)?;

    let state = AppState::new(cfg, archive);
    let (trigger, triggered) = oneshot::channel::<()>();
    let service_state = state.clone();
    let thread = std::thread::Builder::new()
        .name("gridsa-service".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(ServerError::Runtime)?;
            let stop = Arc::new(AtomicBool::new(false));
            let loop_state = service_state.clone();
            let loop_stop = stop.clone();
            let orchestrator = std::thread::Builder::new()
                .name("gridsa-cycles".into())
                .spawn(move || orchestrate(loop_state, loop_stop))
                .map_err(ServerError::Runtime)?;
            let served = rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                tracing::info!(%bound, "listening");
                axum::serve(listener, router(service_state))
                    .with_graceful_shutdown(async move {
                        tokio::select! {
                            _ = shutdown => {}
                            _ = triggered => {}
                        }
                    })
                    .await
            });
            stop.store(true, Ordering::SeqCst);
            let _ = orchestrator.join();
            tracing::info!("service stopped");
            served.map_err(ServerError::Runtime)
        })
        .map_err(ServerError::Runtime)?;
    Ok(Server {
        addr: bound,
        state,
        trigger: Some(trigger),
        thread: Some(thread),
    })
}

pub fn start(cfg: EngineConfig) -> Result<Server, ServerError> {
    start_with(cfg, std::future::pending())
}

/// Runs until SIGINT or SIGTERM.
pub fn run_until_signal(cfg: EngineConfig) -> Result<(), ServerError> {
    let server = start_with(cfg, async {
        let ctrl_c = tokio::signal::ctrl_c();
        #[cfg(unix)]
        {
            let mut term = match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
                Ok(s) => s,
                Err(_) => {
                    let _ = ctrl_c.await;
                    return;
                }
            };
            tokio::select! {
                _ = ctrl_c => {}
                _ = term.recv() => {}
            }
        }
        #[cfg(not(unix))]
        {
            let _ = ctrl_c.await;
        }
    })?;
    server.wait()
}
