use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use super::backend::ImageStore;
use super::persist::write_replace;
use super::OrchestratorError;
use crate::protocol::Turn;

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// A conversation with its images. Turns are only ever appended.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    turns: Vec<Turn>,
    pub image_store: ImageStore,
    pub created_at: u64,
    pub updated_at: u64,
}

/// Serializable view of a session; image bytes are listed by id only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub turns: Vec<Turn>,
    pub images: Vec<String>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub updated_at: u64,
}

impl Session {
    pub fn new(id: impl Into<String>) -> Self {
        let now = now_ms();
        Self {
            id: id.into(),
            turns: Vec::new(),
            image_store: ImageStore::new(),
            created_at: now,
            updated_at: now,
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn push(&mut self, turn: Turn) {
        self.turns.push(turn);
        self.updated_at = now_ms();
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            id: self.id.clone(),
            turns: self.turns.clone(),
            images: self.image_store.keys().cloned().collect(),
            created_at: self.created_at,
            updated_at: self.updated_at,
        }
    }
}

fn image_file(id: &str) -> String {
    format!("{}.bin", id.replace(':', "_"))
}

/// In-memory sessions, optionally mirrored to a directory as
/// `<id>.json` plus `images/<content id>.bin`.
///
/// Each session sits behind its own async mutex; waiting dispatches are
/// served in arrival order.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: std::sync::Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next: AtomicU64,
    dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let dir = dir.as_ref().to_path_buf();
        let io = |e: std::io::Error| OrchestratorError::Persistence(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir.join("images")).map_err(io)?;
        let mut sessions = HashMap::new();
        let mut next = 0;
        for entry in fs::read_dir(&dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io)?;
            let snap: SessionSnapshot = serde_json::from_str(&text)
                .map_err(|e| OrchestratorError::Persistence(format!("{}: {e}", path.display())))?;
            let mut session = Session::new(snap.id.clone());
            session.turns = snap.turns;
            session.created_at = snap.created_at;
            session.updated_at = snap.updated_at;
            for id in snap.images {
                let bytes = fs::read(dir.join("images").join(image_file(&id))).map_err(io)?;
                session.image_store.insert(id, bytes.into());
            }
            if let Some(n) = snap.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                next = next.max(n + 1);
            }
            sessions.insert(snap.id, Arc::new(Mutex::new(session)));
        }
        Ok(Self {
            sessions: std::sync::Mutex::new(sessions),
            next: AtomicU64::new(next),
            dir: Some(dir),
        })
    }

    pub fn create(&self) -> Result<String, OrchestratorError> {
        let id = format!("s{:06}", self.next.fetch_add(1, Ordering::SeqCst));
        let session = Session::new(id.clone());
        self.persist(&session)?;
        self.sessions
            .lock()
            .expect("session map lock")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, OrchestratorError> {
        self.sessions
            .lock()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| OrchestratorError::UnknownSession(id.to_string()))
    }

    pub async fn snapshot(&self, id: &str) -> Result<SessionSnapshot, OrchestratorError> {
        Ok(self.get(id)?.lock().await.snapshot())
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<_> = self.sessions.lock().expect("session map lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn persist(&self, session: &Session) -> Result<(), OrchestratorError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let io = |e: std::io::Error| OrchestratorError::Persistence(format!("{}: {e}", dir.display()));
        for (id, bytes) in &session.image_store {
            let path = dir.join("images").join(image_file(id));
            if !path.exists() {
                write_replace(&path, bytes).map_err(io)?;
            }
        }
        let json = serde_json::to_vec_pretty(&session.snapshot()).expect("snapshots serialize");
        write_replace(&dir.join(format!("{}.json", session.id)), &json).map_err(io)
    }
}
