use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::CatalogueError;
use super::chunk::{Chunk, EventRow};
use super::log::LogRecord;
use super::query::{Level, Query};
use crate::digest::Sha256Digest;
use crate::extractor::{AttrValue, EventMetadata, FileMetadata};

/// Location of one event: enough to fetch its file and pick out the record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventRef {
    pub sha256: Sha256Digest,
    pub source_id: u16,
    pub path: String,
    pub event_index: u64,
    pub timestamp_ns: u64,
}

impl From<&EventRow> for EventRef {
    fn from(row: &EventRow) -> Self {
        Self {
            sha256: row.file_sha256,
            source_id: row.source_id,
            path: row.path.to_string(),
            event_index: row.event_index,
            timestamp_ns: row.timestamp_ns,
        }
    }
}

/// An immutable view of the catalogue. Readers hold one of these while a
/// writer prepares the next.
#[derive(Debug, Clone)]
pub struct CatalogueState {
    chunk_duration_ns: u64,
    files: BTreeMap<Sha256Digest, Arc<FileMetadata>>,
    /// (source_id, path, sha256) in canonical file order.
    file_order: BTreeMap<(u16, Arc<str>, Sha256Digest), Arc<FileMetadata>>,
    chunks: BTreeMap<u64, Arc<Chunk>>,
    generation: u64,
    event_total: u64,
}

impl CatalogueState {
    pub fn new(chunk_duration_ns: u64) -> Self {
        assert!(chunk_duration_ns > 0, "chunk duration must be positive");
        Self {
            chunk_duration_ns,
            files: BTreeMap::new(),
            file_order: BTreeMap::new(),
            chunks: BTreeMap::new(),
            generation: 0,
            event_total: 0,
        }
    }

    pub fn chunk_duration_ns(&self) -> u64 {
        self.chunk_duration_ns
    }

    /// Number of files inserted so far; changes exactly when content changes.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn file_count(&self) -> usize {
        self.files.len()
    }

    pub fn event_count(&self) -> u64 {
        self.event_total
    }

    pub fn contains(&self, sha256: &Sha256Digest) -> bool {
        self.files.contains_key(sha256)
    }

    pub fn file(&self, sha256: &Sha256Digest) -> Option<&FileMetadata> {
        self.files.get(sha256).map(|f| f.as_ref())
    }

    /// Files in canonical (source_id, path) order.
    pub fn files(&self) -> impl Iterator<Item = &FileMetadata> {
        self.file_order.values().map(|f| f.as_ref())
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values().map(|c| c.as_ref())
    }

    pub fn chunk_ids(&self) -> Vec<u64> {
        self.chunks.keys().copied().collect()
    }

    pub fn chunk_id_of(&self, timestamp_ns: u64) -> u64 {
        timestamp_ns / self.chunk_duration_ns
    }

    /// Checks that `events` is the complete, well-formed event list of `file`.
    pub fn check_batch(
        file: &FileMetadata,
        events: &[EventMetadata],
    ) -> Result<(), CatalogueError> {
        let bad = |reason: String| Err(CatalogueError::InconsistentBatch(reason));
        if events.len() as u64 != file.event_count {
            return bad(format!(
                "file declares {} events, batch holds {}",
                file.event_count,
                events.len()
            ));
        }
        for (i, e) in events.iter().enumerate() {
            if e.event_index != i as u64 {
                return bad(format!("event at position {i} has index {}", e.event_index));
            }
            if e.file_sha256 != file.sha256 {
                return bad(format!("event {i} belongs to file {}", e.file_sha256));
            }
        }
        let min = events.iter().map(|e| e.timestamp_ns).min();
        let max = events.iter().map(|e| e.timestamp_ns).max();
        if (min, max) != (file.time_min_ns, file.time_max_ns) {
            return bad("file time bounds disagree with event timestamps".into());
        }
        let non_finite = |attrs: &crate::extractor::Attrs| {
            attrs
                .values()
                .any(|v| matches!(v, AttrValue::Float(f) if !f.is_finite()))
        };
        if non_finite(&file.header_attrs) || events.iter().any(|e| non_finite(&e.attrs)) {
            return bad("non-finite attribute value".into());
        }
        Ok(())
    }

    /// Inserts a checked batch. Returns false if the digest is already present.
    pub(crate) fn apply(&mut self, file: FileMetadata, events: Vec<EventMetadata>) -> bool {
        if self.files.contains_key(&file.sha256) {
            return false;
        }
        let path: Arc<str> = Arc::from(file.path.as_str());
        let mut per_chunk: BTreeMap<u64, Vec<EventRow>> = BTreeMap::new();
        for e in events {
            per_chunk
                .entry(self.chunk_id_of(e.timestamp_ns))
                .or_default()
                .push(EventRow {
                    timestamp_ns: e.timestamp_ns,
                    source_id: file.source_id,
                    path: path.clone(),
                    event_index: e.event_index,
                    file_sha256: file.sha256,
                    attrs: e.attrs,
                });
        }
        for (id, rows) in per_chunk {
            let chunk = self
                .chunks
                .entry(id)
                .or_insert_with(|| Arc::new(Chunk::new(id)));
            Arc::make_mut(chunk).insert(rows);
        }
        self.event_total += file.event_count;
        self.generation += 1;
        let file = Arc::new(file);
        self.file_order
            .insert((file.source_id, path, file.sha256), file.clone());
        self.files.insert(file.sha256, file);
        true
    }

    fn check(q: &Query, level: Level) -> Result<(), CatalogueError> {
        q.validate().map_err(CatalogueError::InvalidQuery)?;
        if q.level != level {
            return Err(CatalogueError::InvalidQuery(format!(
                "expected a {level:?}-level query"
            )));
        }
        Ok(())
    }

    /// Files matching a file-level query, in (source_id, path) order.
    pub fn query_files(&self, q: &Query) -> Result<Vec<FileMetadata>, CatalogueError> {
        Self::check(q, Level::File)?;
        let limit = q.limit.unwrap_or(u64::MAX) as usize;
        Ok(self
            .files()
            .filter(|f| q.source_allowed(f.source_id))
            .filter(|f| match (q.time_range, f.time_min_ns, f.time_max_ns) {
                (None, _, _) => true,
                (Some(r), Some(lo), Some(hi)) => r.overlaps(lo, hi),
                (Some(_), _, _) => false,
            })
            .filter(|f| q.attrs_match(&f.header_attrs))
            .take(limit)
            .cloned()
            .collect())
    }

    /// Chunks that may hold a matching event.
    pub fn plan(&self, q: &Query) -> Result<Vec<u64>, CatalogueError> {
        Self::check(q, Level::Event)?;
        let candidates: Box<dyn Iterator<Item = &Arc<Chunk>>> = match q.time_range {
            Some(r) => Box::new(
                self.chunks
                    .range(self.chunk_id_of(r.from_ns)..=self.chunk_id_of(r.to_ns))
                    .map(|(_, c)| c),
            ),
            None => Box::new(self.chunks.values()),
        };
        Ok(candidates
            .filter(|c| {
                q.predicates.iter().all(|p| {
                    c.sparse_index()
                        .get(&p.attr)
                        .is_some_and(|mm| p.feasible_within(mm.min, mm.max))
                })
            })
            .map(|c| c.id())
            .collect())
    }

    /// Scans the given chunks (ascending ids) for matching events.
    pub fn scan_chunks(&self, q: &Query, chunk_ids: &[u64]) -> Vec<EventRef> {
        let limit = q.limit.unwrap_or(u64::MAX) as usize;
        chunk_ids
            .iter()
            .filter_map(|id| self.chunks.get(id))
            .flat_map(|c| c.rows())
            .filter(|row| q.time_range.is_none_or(|r| r.contains(row.timestamp_ns)))
            .filter(|row| q.source_allowed(row.source_id))
            .filter(|row| q.attrs_match(&row.attrs))
            .take(limit)
            .map(EventRef::from)
            .collect()
    }

    /// Events matching an event-level query, in canonical order.
    pub fn query_events(&self, q: &Query) -> Result<Vec<EventRef>, CatalogueError> {
        let plan = self.plan(q)?;
        Ok(self.scan_chunks(q, &plan))
    }

    /// Writes the whole state as a log; replaying it reproduces this state.
    pub fn write_log(&self, out: &mut impl Write) -> io::Result<()> {
        let mut per_file: BTreeMap<Sha256Digest, Vec<&EventRow>> = BTreeMap::new();
        for row in self.chunks.values().flat_map(|c| c.rows()) {
            per_file.entry(row.file_sha256).or_default().push(row);
        }
        for file in self.files() {
            LogRecord::File(file.clone()).write_line(out)?;
            let mut rows = per_file.remove(&file.sha256).unwrap_or_default();
            rows.sort_by_key(|r| r.event_index);
            for row in rows {
                LogRecord::Event {
                    sha256: row.file_sha256,
                    idx: row.event_index,
                    ts: row.timestamp_ns,
                    attrs: row.attrs.clone(),
                }
                .write_line(out)?;
            }
        }
        Ok(())
    }
}
