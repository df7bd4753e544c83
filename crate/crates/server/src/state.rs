use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use intent_canvas::model::derive_session_id;
use intent_canvas::provider::DirImageStore;
use intent_canvas::{Engine, Session, SessionGenesis};
use tokio::sync::Mutex;

use crate::error::ApiError;
use crate::store::{now_ms, LogLine, SessionDir};

/// In-memory state of one healthy session.
pub struct Live {
    pub session: Session,
    pub log: Vec<LogLine>,
}

pub struct Slot {
    pub dir: SessionDir,
    /// Engine writing images into this session's directory.
    pub engine: Engine,
    pub live: Mutex<Live>,
}

pub struct AppState {
    pub engine: Engine,
    pub data_dir: PathBuf,
    pub default_seed: Option<u64>,
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    unhealthy: RwLock<BTreeMap<String, String>>,
    creating: Mutex<()>,
}

impl AppState {
    /// Restore every session under `data_dir`. Sessions whose files fail the
    /// consistency check are listed as unhealthy and not served.
    pub fn open(engine: Engine, data_dir: PathBuf, default_seed: Option<u64>) -> anyhow::Result<Self> {
        std::fs::create_dir_all(&data_dir)?;
        let state = Self {
            engine,
            data_dir,
            default_seed,
            sessions: RwLock::default(),
            unhealthy: RwLock::default(),
            creating: Mutex::new(()),
        };
        let mut entries: Vec<_> = std::fs::read_dir(&state.data_dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            let dir = SessionDir::new(entry.path());
            match dir.load() {
                Ok(loaded) => {
                    if loaded.repaired {
                        tracing::warn!(session = %name, "snapshot lagged the event log; rewritten from replay");
                    }
                    if loaded.session.id().as_str() != name {
                        state.mark_unhealthy(&name, "directory name does not match the session id".into());
                        continue;
                    }
                    state.insert(dir, loaded.session, loaded.log);
                }
                Err(e) => {
                    tracing::error!(session = %name, error = %e, "session failed its consistency check");
                    state.mark_unhealthy(&name, e.to_string());
                }
            }
        }
        Ok(state)
    }

    fn mark_unhealthy(&self, id: &str, reason: String) {
        self.unhealthy.write().expect("lock poisoned").insert(id.to_owned(), reason);
    }

    fn insert(&self, dir: SessionDir, session: Session, log: Vec<LogLine>) -> Arc<Slot> {
        let engine = self.engine.with_store(Arc::new(DirImageStore::new(dir.root.clone())));
        let id = session.id().as_str().to_owned();
        let slot = Arc::new(Slot {
            dir,
            engine,
            live: Mutex::new(Live { session, log }),
        });
        self.sessions.write().expect("lock poisoned").insert(id, slot.clone());
        slot
    }

    pub fn unhealthy(&self) -> BTreeMap<String, String> {
        self.unhealthy.read().expect("lock poisoned").clone()
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("lock poisoned").keys().cloned().collect()
    }

    pub fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        if let Some(slot) = self.sessions.read().expect("lock poisoned").get(id) {
            return Ok(slot.clone());
        }
        match self.unhealthy.read().expect("lock poisoned").get(id) {
            Some(reason) => Err(ApiError::new(
                axum::http::StatusCode::SERVICE_UNAVAILABLE,
                "unhealthy",
                format!("session {id} is not served: {reason}"),
            )),
            None => Err(ApiError::not_found(format!("session {id}"))),
        }
    }

    /// Generate properties for `topic` and persist a new session.
    pub async fn create_session(&self, topic: String, seed: Option<u64>) -> Result<Arc<Slot>, ApiError> {
        let seed = seed.or(self.default_seed).unwrap_or_else(rand::random);
        let engine = self.engine.clone();
        let t = topic.clone();
        let (_, genesis) = tokio::task::spawn_blocking(move || engine.create_session(&t, seed, 0))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;

        let _guard = self.creating.lock().await;
        let taken = |id: &str| {
            self.sessions.read().expect("lock poisoned").contains_key(id)
                || self.unhealthy.read().expect("lock poisoned").contains_key(id)
                || self.data_dir.join(id).exists()
        };
        let mut ordinal = 0;
        let mut id = genesis.id.clone();
        while taken(id.as_str()) {
            ordinal += 1;
            id = derive_session_id(&topic, seed, ordinal);
        }
        let genesis = SessionGenesis { id, ..genesis };
        let session = Session::from_genesis(genesis.clone())?;
        let dir = SessionDir::new(self.data_dir.join(genesis.id.as_str()));
        dir.create(&genesis, &session)?;
        Ok(self.insert(dir, session, Vec::new()))
    }

    /// Run `op` on a copy of the session without holding its lock, then
    /// commit the new events if nothing else was committed meanwhile.
    pub async fn mutate<T, F>(&self, id: &str, op: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Engine, &mut Session) -> intent_canvas::Result<T> + Send + 'static,
    {
        let slot = self.slot(id)?;
        let (mut work, base) = {
            let live = slot.live.lock().await;
            (live.session.clone(), live.session.last_seq())
        };
        let engine = slot.engine.clone();
        let (work, out) = tokio::task::spawn_blocking(move || op(&engine, &mut work).map(|out| (work, out)))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;

        let mut live = slot.live.lock().await;
        if live.session.last_seq() != base {
            return Err(ApiError::conflict(format!(
                "session {id} changed while the request ran (seq {base} → {}); retry",
                live.session.last_seq()
            )));
        }
        let ts = now_ms();
        let lines: Vec<LogLine> = work.events()[base as usize..].iter().map(|e| LogLine::new(e, ts)).collect();
        slot.dir.append(&lines)?;
        // The log is the durable record; a stale snapshot is rewritten from
        // replay on the next start.
        if let Err(e) = slot.dir.write_snapshot(&work) {
            tracing::error!(session = %id, error = %e, "snapshot write failed after the log append");
        }
        live.log.extend(lines);
        live.session = work;
        Ok(out)
    }

    /// Read-only access under the session lock.
    pub async fn read<T>(&self, id: &str, f: impl FnOnce(&Live) -> T) -> Result<T, ApiError> {
        let slot = self.slot(id)?;
        let live = slot.live.lock().await;
        Ok(f(&live))
    }
}
