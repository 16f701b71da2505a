//! JSON-over-HTTP elicitation service with a write-ahead log.
//!
//! Every session is created from a persisted seed, so the log of creates and
//! accepted responses determines all state; recovery is a replay of that log.

pub mod http;
pub mod wal;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use crate::error::{Error, Result};
use crate::model::Trial;
use crate::normal;
use crate::session::{Session, SessionConfig, Status};

use wal::{Event, Record, Wal};

pub const ENV_PORT: &str = "PREFELICIT_PORT";
pub const ENV_LOG: &str = "PREFELICIT_LOG";

/// 128-bit identifier, lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl SessionId {
    pub fn random() -> Self {
        Self(format!("{:032x}", rand::rng().random::<u128>()))
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionEnvelope {
    pub id: SessionId,
    pub session: Session,
    /// UTC milliseconds.
    pub created: i64,
    pub updated: i64,
}

impl SessionEnvelope {
    pub fn new(id: SessionId, session: Session, t: i64) -> Self {
        Self { id, session, created: t, updated: t }
    }

    pub fn state_doc(&self) -> StateDoc {
        let s = &self.session.state;
        let d = s.dims();
        let cov = s.belief.cov();
        StateDoc {
            id: self.id.clone(),
            status: s.status,
            step: s.step(),
            seed: self.session.seed,
            config: self.session.config.clone(),
            created: self.created,
            updated: self.updated,
            theta: s.estimate().ok().map(|e| e.theta),
            alpha_mean: s.belief.mean().rows(0, d).iter().copied().collect(),
            alpha_cov: (0..d).map(|i| (0..d).map(|j| cov[(i, j)]).collect()).collect(),
            rsu: s.rsu().ok(),
            mi_trace: s.mi_trace.clone(),
            history: s
                .history
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let (x_ref, x_alt) = h.trial.to_original();
                    HistoryDoc { step: i + 1, x_ref, x_alt, r: h.response.bit(), mi_bits: h.mi_bits }
                })
                .collect(),
            trial: s.current_trial.as_ref().map(TrialView::from),
        }
    }

    pub fn trial_doc(&self) -> Option<TrialDoc> {
        let s = &self.session.state;
        let t = s.current_trial.as_ref()?;
        Some(TrialDoc {
            id: self.id.clone(),
            step: s.step(),
            original: t.into(),
            transformed: t.clone(),
            mi_bits: s.current_mi,
        })
    }

    fn trial_record(&self, t: i64) -> Option<Record> {
        let s = &self.session.state;
        Some(Record {
            t,
            sid: self.id.clone(),
            event: Event::Trial { step: s.step(), trial: s.current_trial.clone()?, mi_bits: s.current_mi },
        })
    }
}

/// Proposals in the original `[0, 1]^D` domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub x_ref: Vec<f64>,
    pub x_alt: Vec<f64>,
}

impl From<&Trial> for TrialView {
    fn from(t: &Trial) -> Self {
        let map = |v: &[f64]| v.iter().map(|&a| normal::cdf(a)).collect();
        Self { x_ref: map(&t.x_ref), x_alt: map(&t.x_alt) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedDoc {
    pub id: SessionId,
    pub status: Status,
    pub step: usize,
    pub seed: u64,
    pub trial: TrialView,
    pub created: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDoc {
    pub id: SessionId,
    pub step: usize,
    pub original: TrialView,
    pub transformed: Trial,
    /// `None` for the initial random trial.
    pub mi_bits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDoc {
    pub id: SessionId,
    pub status: Status,
    pub accepted_step: usize,
    pub step: usize,
    pub trial: Option<TrialView>,
    pub theta: Vec<f64>,
    /// MI of the newly designed trial.
    pub mi_bits: Option<f64>,
    pub rsu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryDoc {
    pub step: usize,
    pub x_ref: Vec<f64>,
    pub x_alt: Vec<f64>,
    pub r: u8,
    pub mi_bits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDoc {
    pub id: SessionId,
    pub status: Status,
    pub step: usize,
    pub seed: u64,
    pub config: SessionConfig,
    pub created: i64,
    pub updated: i64,
    pub theta: Option<Vec<f64>>,
    pub alpha_mean: Vec<f64>,
    pub alpha_cov: Vec<Vec<f64>>,
    pub rsu: Option<f64>,
    /// MI of every designed trial, including a pending one; RSU is its mean.
    pub mi_trace: Vec<f64>,
    pub history: Vec<HistoryDoc>,
    pub trial: Option<TrialView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub id: SessionId,
    pub status: Status,
    pub step: usize,
    pub updated: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub log_path: PathBuf,
    /// Longest a request waits on sampling before answering `202`/`503`.
    pub budget_ms: u64,
    /// Base configuration that create requests override field by field.
    pub defaults: SessionConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            log_path: PathBuf::from("prefelicit-wal.ndjson"),
            budget_ms: 10_000,
            defaults: SessionConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Load from a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string())),
            _ => Ok(serde_json::from_str(&text)?),
        }
    }

    /// Apply the port and log-path environment overrides.
    pub fn with_env(mut self) -> Result<Self> {
        if let Ok(p) = std::env::var(ENV_PORT) {
            self.port = p
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{ENV_PORT} is not a port: {p}")))?;
        }
        if let Ok(l) = std::env::var(ENV_LOG) {
            self.log_path = l.into();
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget_ms == 0 {
            return Err(Error::InvalidConfig("budget_ms must be positive".into()));
        }
        self.defaults.validate()
    }

    pub fn budget(&self) -> Duration {
        Duration::from_millis(self.budget_ms)
    }
}

type Slot = Arc<Mutex<SessionEnvelope>>;

/// Shared service state: the session table and the log.
pub struct Service {
    pub config: ServiceConfig,
    sessions: RwLock<HashMap<SessionId, Slot>>,
    wal: Arc<Wal>,
}

impl Service {
    /// Recover every session from the log (repairing a torn tail) and open it for appending.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        let records = wal::load_and_repair(&config.log_path)?;
        let recovered = wal::recover(&records)?;
        tracing::info!(sessions = recovered.len(), records = records.len(), "recovered from log");
        let wal = Arc::new(Wal::open(&config.log_path)?);
        let sessions = recovered
            .into_iter()
            .map(|(id, env)| (id, Arc::new(Mutex::new(env))))
            .collect();
        Ok(Self { config, sessions: RwLock::new(sessions), wal })
    }

    pub async fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<SessionId> = self.sessions.read().await.keys().cloned().collect();
        ids.sort();
        ids
    }

    async fn slot(&self, id: &SessionId) -> Option<Slot> {
        self.sessions.read().await.get(id).cloned()
    }

    pub async fn snapshot(&self, id: &SessionId) -> Option<SessionEnvelope> {
        Some(self.slot(id).await?.lock().await.clone())
    }

    /// Create and persist a session; `seed` is drawn when absent.
    pub async fn create(&self, config: SessionConfig, seed: Option<u64>) -> Result<SessionEnvelope> {
        config.validate()?;
        let seed = seed.unwrap_or_else(|| rand::rng().random());
        let session = Session::new(config.clone(), seed)?;
        let mut sessions = self.sessions.write().await;
        let id = loop {
            let id = SessionId::random();
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let t = wal::now_ms();
        let env = SessionEnvelope::new(id.clone(), session, t);
        self.wal.append(&Record { t, sid: id.clone(), event: Event::Create { seed, config } })?;
        if let Some(rec) = env.trial_record(t) {
            self.wal.append(&rec)?;
        }
        sessions.insert(id, Arc::new(Mutex::new(env.clone())));
        Ok(env)
    }
}

/// Serve until `shutdown` resolves. The bound address is reported through
/// `on_bind` before requests are accepted.
pub async fn serve<F>(config: ServiceConfig, on_bind: impl FnOnce(std::net::SocketAddr), shutdown: F) -> Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    let addr = format!("{}:{}", config.host, config.port);
    let service = Arc::new(Service::open(config)?);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    on_bind(listener.local_addr()?);
    axum::serve(listener, http::router(service))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
