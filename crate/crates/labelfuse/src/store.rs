//! On-disk review queue.
//!
//! Layout under the store directory:
//!
//! - `log.jsonl`: one [`LogRecord`] per line, appended and flushed before the
//!   in-memory state changes.
//! - `snapshot.json`: a compacted [`ReviewState`], replaced atomically.
//!
//! Opening loads the snapshot and replays log records newer than it. All
//! mutations go through one writer lock; readers clone an `Arc` of the
//! current state and never wait on disk IO.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use labelfuse_core::model::LabelSpace;
use labelfuse_core::review::{Decision, LogRecord, ReviewError, ReviewItem, ReviewState, StatusCounts, StatusKind};
use thiserror::Error;

const LOG_FILE: &str = "log.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: corrupt record: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Review(#[from] ReviewError),
}

pub type Clock = Box<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

struct Writer {
    log: File,
    since_snapshot: u64,
}

pub struct ReviewStore {
    dir: PathBuf,
    space: LabelSpace,
    writer: Mutex<Writer>,
    state: RwLock<Arc<ReviewState>>,
    clock: Clock,
    compact_every: u64,
}

impl std::fmt::Debug for ReviewStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewStore").field("dir", &self.dir).finish_non_exhaustive()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// Reads a store directory from disk without opening it for writing.
pub fn load_state(dir: &Path) -> Result<ReviewState, StoreError> {
    let snap_path = dir.join(SNAPSHOT_FILE);
    let mut state = match fs::read_to_string(&snap_path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: snap_path.clone(),
            line: e.line(),
            message: e.to_string(),
        })?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => ReviewState::default(),
        Err(e) => return Err(io_err(&snap_path)(e)),
    };
    for record in read_log(&dir.join(LOG_FILE))? {
        if record.sequence_no() > state.last_sequence {
            state.apply(record)?;
        }
    }
    Ok(state)
}

/// All complete records of a log file. A final line without a newline is a
/// torn write and is ignored.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, StoreError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line).map_err(io_err(path))? == 0 {
            break;
        }
        lineno += 1;
        if !line.ends_with('\n') {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn drop_torn_tail(path: &Path, log: &File) -> Result<(), StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        log.set_len(keep as u64).map_err(io_err(path))?;
    }
    Ok(())
}

impl ReviewStore {
    /// Opens (creating if needed) the store in `dir`. `space` validates
    /// relabel decisions.
    pub fn open(dir: impl Into<PathBuf>, space: LabelSpace) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let state = load_state(&dir)?;
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(io_err(&log_path))?;
        drop_torn_tail(&log_path, &log)?;
        Ok(Self {
            dir,
            space,
            writer: Mutex::new(Writer { log, since_snapshot: 0 }),
            state: RwLock::new(Arc::new(state)),
            clock: Box::new(system_clock),
            compact_every: 10_000,
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    /// Compact automatically after this many appended records (0 disables).
    pub fn with_compaction_interval(mut self, records: u64) -> Self {
        self.compact_every = records;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.space
    }

    /// The current state. Cheap: clones an `Arc`.
    pub fn snapshot(&self) -> Arc<ReviewState> {
        self.state.read().expect("state lock poisoned").clone()
    }

    fn lock_writer(&self) -> std::sync::MutexGuard<'_, Writer> {
        self.writer.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn append(&self, w: &mut Writer, records: &[LogRecord]) -> Result<(), StoreError> {
        let path = self.dir.join(LOG_FILE);
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("log record serializes");
            buf.push(b'\n');
        }
        w.log.write_all(&buf).map_err(io_err(&path))?;
        w.log.sync_data().map_err(io_err(&path))?;
        let mut guard = self.state.write().expect("state lock poisoned");
        let state = Arc::make_mut(&mut guard);
        for r in records {
            state.apply(r.clone())?;
        }
        w.since_snapshot += records.len() as u64;
        Ok(())
    }

    fn maybe_compact(&self, w: &mut Writer) -> Result<(), StoreError> {
        if self.compact_every > 0 && w.since_snapshot >= self.compact_every {
            self.compact_locked(w)?;
        }
        Ok(())
    }

    /// Persists new pending items. Returns `(added, duplicates)`; items whose
    /// id is already stored are skipped.
    pub fn enqueue(&self, items: Vec<ReviewItem>) -> Result<(usize, usize), StoreError> {
        let mut w = self.lock_writer();
        let (records, duplicates) = self.snapshot().plan_enqueue(items)?;
        if !records.is_empty() {
            self.append(&mut w, &records)?;
            self.maybe_compact(&mut w)?;
        }
        Ok((records.len(), duplicates))
    }

    /// Records one decision. Concurrent calls on the same item are
    /// serialized; all but the first get [`ReviewError::AlreadyDecided`].
    pub fn decide(&self, item_id: &str, decision: &Decision, actor: &str) -> Result<ReviewItem, StoreError> {
        let mut w = self.lock_writer();
        let record = self.snapshot().plan_decision(item_id, decision, actor, (self.clock)(), &self.space)?;
        self.append(&mut w, &[LogRecord::Decided(record)])?;
        self.maybe_compact(&mut w)?;
        Ok(self.snapshot().get(item_id).cloned().expect("decided item exists"))
    }

    pub fn get(&self, item_id: &str) -> Option<ReviewItem> {
        self.snapshot().get(item_id).cloned()
    }

    pub fn list(
        &self,
        filter: Option<StatusKind>,
        offset: usize,
        limit: usize,
    ) -> Result<(Vec<ReviewItem>, usize), StoreError> {
        let state = self.snapshot();
        let (items, total) = state.list(filter, offset, limit)?;
        Ok((items.into_iter().cloned().collect(), total))
    }

    pub fn counts(&self) -> StatusCounts {
        self.snapshot().counts()
    }

    /// Writes a snapshot and truncates the log.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut w = self.lock_writer();
        self.compact_locked(&mut w)
    }

    fn compact_locked(&self, w: &mut Writer) -> Result<(), StoreError> {
        let state = self.snapshot();
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err(&self.dir))?;
        serde_json::to_writer(&mut tmp, &*state).expect("state serializes");
        tmp.as_file().sync_all().map_err(io_err(&self.dir))?;
        let snap_path = self.dir.join(SNAPSHOT_FILE);
        tmp.persist(&snap_path).map_err(|e| io_err(&snap_path)(e.error))?;
        // a crash before truncation leaves records the snapshot already covers;
        // loading skips them by sequence number
        let log_path = self.dir.join(LOG_FILE);
        w.log.set_len(0).map_err(io_err(&log_path))?;
        w.log.sync_all().map_err(io_err(&log_path))?;
        w.since_snapshot = 0;
        Ok(())
    }
}
