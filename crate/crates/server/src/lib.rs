//! HTTP service for live feeding sessions.
//!
//! All routes live under `/api/v1`; see `docs/api.md` for the reference.

pub mod api;
pub mod config;
mod routes;
mod sessions;

use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use feedmon_core::detector::DetectorModel;
use feedmon_core::fsm::{FsmDefinition, RuntimeConfig, Session, SimulatedMotions};
use feedmon_core::records::{RecordFilter, RecordStore};
use feedmon_core::signal::{SimConfig, Simulator, Task};
use tokio::net::TcpListener;

use crate::api::{CreateSession, Health, ModelInfo, SessionView, API_VERSION};
pub use crate::config::{ConfigError, ServerConfig};
pub use crate::routes::router;
use crate::sessions::{Driver, Event, SessionHandle};
pub use crate::sessions::CommandResult;

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

struct ModelEntry {
    id: String,
    task: Task,
    model: Arc<DetectorModel>,
}

#[derive(Default)]
struct Models {
    entries: Vec<ModelEntry>,
    active: BTreeMap<Task, String>,
    next: u64,
}

impl Models {
    fn info(&self, e: &ModelEntry) -> ModelInfo {
        ModelInfo {
            version: API_VERSION,
            model_id: e.id.clone(),
            task: e.task,
            method: e.model.method(),
            channels: e.model.channels().to_vec(),
            active: self.active.get(&e.task) == Some(&e.id),
        }
    }

    fn add(&mut self, task: Task, model: DetectorModel, activate: bool) -> ModelInfo {
        self.next += 1;
        let id = format!("m{}", self.next);
        self.entries.push(ModelEntry {
            id: id.clone(),
            task,
            model: Arc::new(model),
        });
        if activate {
            self.active.insert(task, id);
        }
        self.info(self.entries.last().unwrap())
    }

    fn active_detectors(&self) -> BTreeMap<Task, Arc<DetectorModel>> {
        self.entries
            .iter()
            .filter(|e| self.active.get(&e.task) == Some(&e.id))
            .map(|e| (e.task, Arc::clone(&e.model)))
            .collect()
    }
}

struct Shared {
    def: Arc<FsmDefinition>,
    sim: Simulator,
    runtime: RuntimeConfig,
    tick: Duration,
    max_live: usize,
    store: Arc<Mutex<RecordStore>>,
    sessions: Mutex<BTreeMap<String, Arc<SessionHandle>>>,
    models: RwLock<Models>,
    next_session: AtomicU64,
}

/// Server state shared by all handlers.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

fn read_file(path: &PathBuf) -> Result<String, StartupError> {
    std::fs::read_to_string(path).map_err(|e| StartupError::File {
        path: path.clone(),
        message: e.to_string(),
    })
}

impl AppState {
    /// Loads the FSM, simulator and detector models named by `cfg` and opens
    /// the record store.
    pub fn from_config(cfg: &ServerConfig) -> Result<Self, StartupError> {
        let def = match &cfg.fsm {
            Some(p) => FsmDefinition::from_toml_str(&read_file(p)?).map_err(|e| StartupError::File {
                path: p.clone(),
                message: e.to_string(),
            })?,
            None => FsmDefinition::builtin(),
        };
        let sim = match &cfg.simulator {
            Some(p) => Simulator::new(SimConfig::from_toml_str(&read_file(p)?).map_err(|e| StartupError::File {
                path: p.clone(),
                message: e.to_string(),
            })?),
            None => Simulator::default(),
        };
        if cfg.max_live_sessions == 0 {
            return Err(StartupError::File {
                path: "max_live_sessions".into(),
                message: "must be at least 1".into(),
            });
        }
        let store = RecordStore::open(&cfg.records_dir).map_err(|e| StartupError::File {
            path: cfg.records_dir.clone(),
            message: e.to_string(),
        })?;
        let state = Self::new(def, sim, cfg.runtime, Duration::from_millis(cfg.tick_ms), cfg.max_live_sessions, store);
        for (task, path) in &cfg.models {
            let model = DetectorModel::from_json(&read_file(path)?).map_err(|e| StartupError::File {
                path: path.clone(),
                message: e.to_string(),
            })?;
            state.add_model(*task, model, true).map_err(|e| StartupError::File {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(state)
    }

    pub fn new(
        def: FsmDefinition,
        sim: Simulator,
        runtime: RuntimeConfig,
        tick: Duration,
        max_live: usize,
        store: RecordStore,
    ) -> Self {
        // continue numbering after sessions already in the store
        let seen = store
            .list(&RecordFilter::default())
            .unwrap_or_default()
            .iter()
            .filter_map(|r| r.session_id.strip_prefix('s')?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        Self(Arc::new(Shared {
            def: Arc::new(def),
            sim,
            runtime,
            tick,
            max_live,
            store: Arc::new(Mutex::new(store)),
            sessions: Mutex::new(BTreeMap::new()),
            models: RwLock::new(Models::default()),
            next_session: AtomicU64::new(seen + 1),
        }))
    }

    pub fn definition(&self) -> &FsmDefinition {
        &self.0.def
    }

    pub fn health(&self) -> Health {
        let models = self.0.models.read().unwrap();
        Health {
            version: API_VERSION,
            status: "ok".into(),
            live_sessions: self.live_sessions(),
            max_live_sessions: self.0.max_live,
            active_models: models.active.clone(),
        }
    }

    fn live_sessions(&self) -> usize {
        self.0.sessions.lock().unwrap().values().filter(|h| !h.is_closed()).count()
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionView, ApiError> {
        if req.version != API_VERSION {
            return Err(ApiError::BadRequest(format!("unsupported version {}", req.version)));
        }
        let mut sessions = self.0.sessions.lock().unwrap();
        let live = sessions.values().filter(|h| !h.is_closed()).count();
        if live >= self.0.max_live {
            return Err(ApiError::Conflict(format!(
                "live session limit reached ({live}); close a session first"
            )));
        }
        let n = self.0.next_session.fetch_add(1, Ordering::Relaxed);
        let id = format!("s{n}");
        let detectors = self.0.models.read().unwrap().active_detectors();
        let motions = SimulatedMotions::new(self.0.sim.clone(), req.seed.unwrap_or(n));
        let (session, first) = Session::new(&id, Arc::clone(&self.0.def), self.0.runtime, Box::new(motions), detectors)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let handle = sessions::spawn(
            Driver {
                session,
                task: Some(req.task),
                def: Arc::clone(&self.0.def),
                store: Arc::clone(&self.0.store),
                tick: self.0.tick,
            },
            first,
        );
        let view = handle.view();
        tracing::info!(session = %id, task = %req.task, "session created");
        sessions.insert(id, handle);
        Ok(view)
    }

    pub(crate) fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.0
            .sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session `{id}`")))
    }

    pub async fn command(&self, id: &str, cmd: api::Command) -> Result<CommandResult, ApiError> {
        if cmd.version != API_VERSION {
            return Err(ApiError::BadRequest(format!("unsupported version {}", cmd.version)));
        }
        let handle = self.session(id)?;
        let (reply, rx) = tokio::sync::oneshot::channel();
        if !handle.send(Event::Command { cmd, reply }).await {
            return Err(ApiError::Conflict(format!("session `{id}` is closed")));
        }
        rx.await
            .map_err(|_| ApiError::Conflict(format!("session `{id}` is closed")))
    }

    /// Ends a session: a running motion is stopped and retracted and an
    /// unlabeled motion is recorded as incomplete. Idempotent.
    pub async fn close_session(&self, id: &str) -> Result<SessionView, ApiError> {
        let handle = self.session(id)?;
        let (reply, rx) = tokio::sync::oneshot::channel();
        if handle.send(Event::Close { reply }).await {
            let _ = rx.await;
        }
        Ok(handle.view())
    }

    pub async fn close_all(&self) {
        let ids: Vec<String> = self.0.sessions.lock().unwrap().keys().cloned().collect();
        for id in ids {
            let _ = self.close_session(&id).await;
        }
    }

    pub fn add_model(&self, task: Task, model: DetectorModel, activate: bool) -> Result<ModelInfo, ApiError> {
        model.validate().map_err(|e| ApiError::BadRequest(e.to_string()))?;
        let expected = self.0.sim.channel_names(task);
        if model.channels() != expected.as_slice() {
            return Err(ApiError::BadRequest(format!(
                "{task} sessions produce channels {expected:?}, model expects {:?}",
                model.channels()
            )));
        }
        Ok(self.0.models.write().unwrap().add(task, model, activate))
    }

    pub fn activate_model(&self, id: &str) -> Result<ModelInfo, ApiError> {
        let mut models = self.0.models.write().unwrap();
        let task = models
            .entries
            .iter()
            .find(|e| e.id == id)
            .map(|e| e.task)
            .ok_or_else(|| ApiError::NotFound(format!("no model `{id}`")))?;
        models.active.insert(task, id.to_string());
        let e = models.entries.iter().find(|e| e.id == id).unwrap();
        Ok(models.info(e))
    }

    pub fn models(&self) -> Vec<ModelInfo> {
        let models = self.0.models.read().unwrap();
        models.entries.iter().map(|e| models.info(e)).collect()
    }

    pub(crate) fn store(&self) -> std::sync::MutexGuard<'_, RecordStore> {
        self.0.store.lock().unwrap()
    }
}

/// Serves on `listener` until `shutdown` resolves, then closes every
/// session so their records are written and telemetry streams end.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let closer = state.clone();
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async move {
            shutdown.await;
            tracing::info!("shutting down");
            closer.close_all().await;
        })
        .await
}
