//! One directory per session:
//!
//! ```text
//! <data-dir>/<session-id>/genesis.json   creation inputs the log replays from
//!                         events.jsonl   {seq, kind, payload, ts} per line, append-only
//!                         session.json   canonical snapshot, replaced atomically
//!                         layout.json    opaque client geometry
//!                         menus/         pending adaptive path-copy menus
//!                         images/        content-addressed images
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use intent_canvas::{Event, Session, SessionGenesis};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Corrupt(String),
}

type Result<T> = std::result::Result<T, StoreError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub seq: u64,
    pub kind: String,
    pub payload: Value,
    /// Milliseconds since the Unix epoch at append time.
    pub ts: u64,
}

impl LogLine {
    pub fn new(event: &Event, ts: u64) -> Self {
        let mut v = serde_json::to_value(event).expect("event serializes");
        let obj = v.as_object_mut().expect("event is an object");
        Self {
            seq: event.seq,
            kind: obj.remove("kind").and_then(|k| k.as_str().map(str::to_owned)).expect("event has a kind"),
            payload: obj.remove("payload").unwrap_or(Value::Null),
            ts,
        }
    }

    pub fn event(&self) -> std::result::Result<Event, serde_json::Error> {
        serde_json::from_value(serde_json::json!({"seq": self.seq, "kind": self.kind, "payload": self.payload}))
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Write `bytes` to `path` via a synced temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io(path))?;
    if let Some(dir) = path.parent() {
        // make the rename itself durable
        File::open(dir).and_then(|d| d.sync_all()).map_err(io(dir))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SessionDir {
    pub root: PathBuf,
}

/// A session restored from disk.
#[derive(Debug)]
pub struct Loaded {
    pub genesis: SessionGenesis,
    pub session: Session,
    pub log: Vec<LogLine>,
    /// The snapshot lagged the log (crash between the two writes) and was rewritten.
    pub repaired: bool,
}

impl SessionDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn genesis_path(&self) -> PathBuf {
        self.root.join("genesis.json")
    }
    pub fn events_path(&self) -> PathBuf {
        self.root.join("events.jsonl")
    }
    pub fn snapshot_path(&self) -> PathBuf {
        self.root.join("session.json")
    }
    pub fn layout_path(&self) -> PathBuf {
        self.root.join("layout.json")
    }
    pub fn menu_path(&self, menu_id: &str) -> PathBuf {
        self.root.join("menus").join(format!("{menu_id}.json"))
    }

    /// Lay out a fresh session. Fails if the directory already exists.
    pub fn create(&self, genesis: &SessionGenesis, session: &Session) -> Result<()> {
        fs::create_dir_all(self.root.parent().expect("session dir has a parent")).map_err(io(&self.root))?;
        fs::create_dir(&self.root).map_err(io(&self.root))?;
        write_atomic(&self.genesis_path(), &serde_json::to_vec_pretty(genesis).expect("genesis serializes"))?;
        File::create(self.events_path())
            .and_then(|f| f.sync_all())
            .map_err(io(&self.events_path()))?;
        self.write_snapshot(session)
    }

    /// Append and fsync log lines.
    pub fn append(&self, lines: &[LogLine]) -> Result<()> {
        if lines.is_empty() {
            return Ok(());
        }
        let path = self.events_path();
        let mut buf = Vec::new();
        for l in lines {
            serde_json::to_writer(&mut buf, l).expect("log line serializes");
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io(&path))?;
        f.write_all(&buf).map_err(io(&path))?;
        f.sync_data().map_err(io(&path))
    }

    pub fn write_snapshot(&self, session: &Session) -> Result<()> {
        write_atomic(&self.snapshot_path(), session.canonical_json().as_bytes())
    }

    pub fn read_log(&self) -> Result<Vec<LogLine>> {
        let path = self.events_path();
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(StoreError::Corrupt("event log ends in a truncated line".into()));
        }
        text.lines()
            .enumerate()
            .map(|(n, line)| {
                serde_json::from_str(line).map_err(|e| StoreError::Corrupt(format!("event log line {}: {e}", n + 1)))
            })
            .collect()
    }

    /// Rebuild the session from genesis + log and check it against the snapshot.
    pub fn load(&self) -> Result<Loaded> {
        let path = self.genesis_path();
        let genesis: SessionGenesis = serde_json::from_slice(&fs::read(&path).map_err(io(&path))?)
            .map_err(|e| StoreError::Corrupt(format!("genesis.json: {e}")))?;
        let log = self.read_log()?;
        let events = log
            .iter()
            .map(|l| l.event().map_err(|e| StoreError::Corrupt(format!("event {}: {e}", l.seq))))
            .collect::<Result<Vec<_>>>()?;
        let replayed = Session::replay(genesis.clone(), &events)
            .map_err(|e| StoreError::Corrupt(format!("event log does not replay: {e}")))?;

        let path = self.snapshot_path();
        let raw = fs::read_to_string(&path).map_err(io(&path))?;
        let snapshot: Session =
            serde_json::from_str(&raw).map_err(|e| StoreError::Corrupt(format!("session.json: {e}")))?;
        let mut repaired = false;
        // byte comparison: snapshots are always written in canonical form
        if raw != replayed.canonical_json() {
            let k = snapshot.last_seq() as usize;
            let prefix_matches = k < events.len()
                && Session::replay(genesis.clone(), &events[..k])
                    .map(|s| s.canonical_json() == raw)
                    .unwrap_or(false);
            if !prefix_matches {
                return Err(StoreError::Corrupt("snapshot disagrees with event-log replay".into()));
            }
            self.write_snapshot(&replayed)?;
            repaired = true;
        }
        Ok(Loaded {
            genesis,
            session: replayed,
            log,
            repaired,
        })
    }

    pub fn read_layout(&self) -> Result<Option<Value>> {
        let path = self.layout_path();
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| StoreError::Corrupt(format!("layout.json: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }

    pub fn write_layout(&self, layout: &Value) -> Result<()> {
        write_atomic(&self.layout_path(), &serde_json::to_vec(layout).expect("layout serializes"))
    }

    pub fn write_menu<T: Serialize>(&self, menu_id: &str, menu: &T) -> Result<()> {
        let path = self.menu_path(menu_id);
        fs::create_dir_all(path.parent().expect("menus dir")).map_err(io(&path))?;
        write_atomic(&path, &serde_json::to_vec(menu).expect("menu serializes"))
    }

    pub fn read_menu<T: for<'de> Deserialize<'de>>(&self, menu_id: &str) -> Result<Option<T>> {
        let path = self.menu_path(menu_id);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| StoreError::Corrupt(format!("menu {menu_id}: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }
}
