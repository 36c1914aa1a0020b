//! In-memory session store and the file-backed dashboard.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use dashtalk_core::schema::WidgetSpec;
use dashtalk_core::session::SessionState;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SESSION_CAPACITY: usize = 1000;
pub const DEFAULT_IDLE_MINUTES: i64 = 30;

/// One session behind its own lock, so operations on it are serialized
/// while other sessions proceed.
pub type SessionSlot = Arc<tokio::sync::Mutex<SessionState>>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("session store is full ({0} sessions)")]
    Capacity(usize),
    #[error("widget `{0}` is already on the dashboard")]
    DuplicateWidget(String),
    #[error("dashboard store I/O failed at {path}: {message}")]
    Io { path: PathBuf, message: String },
}

pub struct SessionStore {
    sessions: Mutex<HashMap<String, SessionSlot>>,
    capacity: usize,
    idle: Duration,
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            sessions: Mutex::new(HashMap::new()),
            capacity,
            idle: Duration::minutes(DEFAULT_IDLE_MINUTES),
        }
    }

    pub fn with_idle_timeout(mut self, idle: Duration) -> Self {
        self.idle = idle;
        self
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a session, evicting idle ones first if the store is full.
    pub fn insert(&self, state: SessionState, now: DateTime<Utc>) -> Result<SessionSlot, StoreError> {
        let mut sessions = self.sessions.lock();
        if sessions.len() >= self.capacity {
            sessions.retain(|_, slot| !self.expired(slot, now));
        }
        if sessions.len() >= self.capacity {
            return Err(StoreError::Capacity(self.capacity));
        }
        let id = state.session_id.clone();
        let slot = Arc::new(tokio::sync::Mutex::new(state));
        sessions.insert(id, Arc::clone(&slot));
        Ok(slot)
    }

    /// Looks a session up; an idle-expired session is dropped and reported
    /// as absent.
    pub fn get(&self, id: &str, now: DateTime<Utc>) -> Option<SessionSlot> {
        let mut sessions = self.sessions.lock();
        let slot = sessions.get(id)?;
        if self.expired(slot, now) {
            sessions.remove(id);
            return None;
        }
        Some(Arc::clone(slot))
    }

    pub fn evict_expired(&self, now: DateTime<Utc>) -> usize {
        let mut sessions = self.sessions.lock();
        let before = sessions.len();
        sessions.retain(|_, slot| !self.expired(slot, now));
        before - sessions.len()
    }

    /// A session someone is currently working on is never expired.
    fn expired(&self, slot: &SessionSlot, now: DateTime<Utc>) -> bool {
        match slot.try_lock() {
            Ok(state) => now - state.last_activity > self.idle,
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dashboard {
    pub widgets: Vec<WidgetSpec>,
}

/// Confirmed widgets, in confirmation order, optionally mirrored to a JSON
/// file after every change.
pub struct DashboardStore {
    dashboard: Mutex<Dashboard>,
    path: Option<PathBuf>,
}

impl DashboardStore {
    pub fn in_memory() -> Self {
        Self {
            dashboard: Mutex::new(Dashboard::default()),
            path: None,
        }
    }

    /// Opens (or starts) the dashboard persisted at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let path = path.into();
        let dashboard = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            serde_json::from_str(&text).map_err(|e| io_error(&path, e))?
        } else {
            Dashboard::default()
        };
        Ok(Self {
            dashboard: Mutex::new(dashboard),
            path: Some(path),
        })
    }

    pub fn widgets(&self) -> Vec<WidgetSpec> {
        self.dashboard.lock().widgets.clone()
    }

    pub fn add(&self, spec: WidgetSpec) -> Result<(), StoreError> {
        let mut dashboard = self.dashboard.lock();
        if dashboard.widgets.iter().any(|w| w.widget_id == spec.widget_id) {
            return Err(StoreError::DuplicateWidget(spec.widget_id));
        }
        dashboard.widgets.push(spec);
        if let Some(path) = &self.path {
            if let Err(e) = persist(path, &dashboard) {
                dashboard.widgets.pop();
                return Err(e);
            }
        }
        Ok(())
    }
}

fn persist(path: &Path, dashboard: &Dashboard) -> Result<(), StoreError> {
    let text = serde_json::to_string_pretty(dashboard).expect("dashboard serializes");
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| io_error(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
