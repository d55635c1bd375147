//! The metadata catalogue: an embedded store of file and event metadata,
//! partitioned into fixed-duration time chunks.
//!
//! Each chunk keeps per-attribute min/max bounds, so event queries skip any
//! chunk whose bounds rule out a match. Access follows a single-writer /
//! multiple-reader discipline: the writer builds the next [`CatalogueState`]
//! off to the side, appends the batch to the log, and then swaps the shared
//! pointer. Readers always see a state reflecting a prefix of completed
//! ingests.

mod chunk;
pub mod log;
mod query;
mod state;

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use chunk::{Chunk, EventRow, MinMax, SparseIndex};
pub use log::{LogRecord, Restored, restore};
pub use query::{Level, Predicate, PredicateOp, Query, TimeRange};
pub use state::{CatalogueState, EventRef};

use crate::extractor::{EventMetadata, FileMetadata};

pub const DEFAULT_CHUNK_DURATION_NS: u64 = 3_600_000_000_000;

#[derive(Debug, thiserror::Error)]
pub enum CatalogueError {
    #[error("inconsistent ingest batch: {0}")]
    InconsistentBatch(String),
    #[error("storage full while appending to the catalogue log")]
    StorageFull,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("corrupt catalogue log at line {line}")]
    CorruptLog { line: usize },
    #[error("catalogue log {0} is in use by another process")]
    Locked(PathBuf),
    #[error("catalogue log i/o: {0}")]
    Io(#[source] io::Error),
}

impl PartialEq for CatalogueError {
    fn eq(&self, other: &Self) -> bool {
        use CatalogueError::*;
        match (self, other) {
            (InconsistentBatch(a), InconsistentBatch(b)) => a == b,
            (StorageFull, StorageFull) => true,
            (Locked(a), Locked(b)) => a == b,
            (InvalidQuery(a), InvalidQuery(b)) => a == b,
            (CorruptLog { line: a }, CorruptLog { line: b }) => a == b,
            (Io(a), Io(b)) => a.kind() == b.kind(),
            _ => false,
        }
    }
}

fn io_error(e: io::Error) -> CatalogueError {
    if e.kind() == io::ErrorKind::StorageFull {
        CatalogueError::StorageFull
    } else {
        CatalogueError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogueConfig {
    pub chunk_duration_ns: u64,
    /// `None` keeps the catalogue in memory only.
    pub log_path: Option<PathBuf>,
}

impl Default for CatalogueConfig {
    fn default() -> Self {
        Self {
            chunk_duration_ns: DEFAULT_CHUNK_DURATION_NS,
            log_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub inserted: bool,
}

/// What `open` found in an existing log.
#[derive(Debug, Default)]
pub struct Recovery {
    pub files: usize,
    pub events: u64,
    /// A torn final line or unfinished batch that was cut off.
    pub discarded_tail: Option<CatalogueError>,
}

pub struct Catalogue {
    current: RwLock<Arc<CatalogueState>>,
    writer: Mutex<Option<File>>,
}

impl Catalogue {
    pub fn in_memory(chunk_duration_ns: u64) -> Self {
        Self {
            current: RwLock::new(Arc::new(CatalogueState::new(chunk_duration_ns))),
            writer: Mutex::new(None),
        }
    }

    /// Opens the catalogue, replaying the log at `config.log_path` if it
    /// exists. A torn tail is cut off so later appends start on a clean line.
    pub fn open(config: &CatalogueConfig) -> Result<(Self, Recovery), CatalogueError> {
        if config.chunk_duration_ns == 0 {
            return Err(CatalogueError::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                "chunk_duration_ns must be positive",
            )));
        }
        let Some(path) = &config.log_path else {
            return Ok((
                Self::in_memory(config.chunk_duration_ns),
                Recovery::default(),
            ));
        };
        let mut file = open_locked(path)?;
        let restored = restore(BufReader::new(&file), config.chunk_duration_ns)?;
        trim_log(&mut file, restored.valid_len).map_err(io_error)?;
        let recovery = Recovery {
            files: restored.state.file_count(),
            events: restored.state.event_count(),
            discarded_tail: restored.tail_error,
        };
        if let Some(tail) = &recovery.discarded_tail {
            tracing::warn!(log = %path.display(), "discarded catalogue log tail: {tail}");
        }
        Ok((
            Self {
                current: RwLock::new(Arc::new(restored.state)),
                writer: Mutex::new(Some(file)),
            },
            recovery,
        ))
    }

    /// The current state. Cheap; the returned view never changes.
    pub fn snapshot(&self) -> Arc<CatalogueState> {
        self.current.read().clone()
    }

    /// Adds a file and its events. Idempotent on the file digest; durable
    /// once it returns.
    pub fn ingest(
        &self,
        file: FileMetadata,
        events: Vec<EventMetadata>,
    ) -> Result<IngestReceipt, CatalogueError> {
        let mut writer = self.writer.lock();
        let base = self.snapshot();
        if base.contains(&file.sha256) {
            return Ok(IngestReceipt { inserted: false });
        }
        CatalogueState::check_batch(&file, &events)?;

        if let Some(log) = writer.as_mut() {
            let bytes = log::encode_batch(&file, &events);
            log.write_all(&bytes).map_err(io_error)?;
            log.sync_data().map_err(io_error)?;
        }

        let mut next = (*base).clone();
        next.apply(file, events);
        *self.current.write() = Arc::new(next);
        Ok(IngestReceipt { inserted: true })
    }

    pub fn query_files(&self, q: &Query) -> Result<Vec<FileMetadata>, CatalogueError> {
        self.snapshot().query_files(q)
    }

    pub fn query_events(&self, q: &Query) -> Result<Vec<EventRef>, CatalogueError> {
        self.snapshot().query_events(q)
    }

    pub fn plan(&self, q: &Query) -> Result<Vec<u64>, CatalogueError> {
        self.snapshot().plan(q)
    }
}

/// Opens (creating if needed) and exclusively locks the log, so a second
/// process cannot append to it concurrently.
fn open_locked(path: &Path) -> Result<File, CatalogueError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_error)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(io_error)?;
    match file.try_lock() {
        Ok(()) => Ok(file),
        Err(std::fs::TryLockError::WouldBlock) => Err(CatalogueError::Locked(path.to_path_buf())),
        Err(std::fs::TryLockError::Error(e)) => Err(io_error(e)),
    }
}

/// Cuts the log back to its last complete batch and makes sure it ends on
/// a line boundary.
fn trim_log(file: &mut File, valid_len: u64) -> io::Result<()> {
    use std::io::{Read, Seek, SeekFrom};
    if file.metadata()?.len() > valid_len {
        file.set_len(valid_len)?;
    }
    if valid_len > 0 {
        let mut last = [0u8];
        file.seek(SeekFrom::Start(valid_len - 1))?;
        file.read_exact(&mut last)?;
        if last[0] != b'\n' {
            file.write_all(b"\n")?;
        }
    }
    file.sync_data()
}
