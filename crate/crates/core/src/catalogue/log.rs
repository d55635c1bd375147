//! JSON-lines persistence. A file record is followed by exactly
//! `event_count` event records; a batch becomes visible on replay only once
//! all of its event records have been read.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use super::CatalogueError;
use super::state::CatalogueState;
use crate::digest::Sha256Digest;
use crate::extractor::{Attrs, EventMetadata, FileMetadata};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum LogRecord {
    File(FileMetadata),
    Event {
        sha256: Sha256Digest,
        idx: u64,
        ts: u64,
        attrs: Attrs,
    },
}

impl LogRecord {
    pub fn write_line(&self, out: &mut impl Write) -> io::Result<()> {
        serde_json::to_writer(&mut *out, self)?;
        out.write_all(b"\n")
    }
}

/// Serializes one ingest batch as log lines.
pub fn encode_batch(file: &FileMetadata, events: &[EventMetadata]) -> Vec<u8> {
    let mut out = Vec::new();
    LogRecord::File(file.clone())
        .write_line(&mut out)
        .expect("writing to a Vec cannot fail");
    for e in events {
        LogRecord::Event {
            sha256: e.file_sha256,
            idx: e.event_index,
            ts: e.timestamp_ns,
            attrs: e.attrs.clone(),
        }
        .write_line(&mut out)
        .expect("writing to a Vec cannot fail");
    }
    out
}

/// Result of replaying a log.
#[derive(Debug)]
pub struct Restored {
    pub state: CatalogueState,
    /// Byte length of the log prefix holding complete batches.
    pub valid_len: u64,
    /// Set when the log ends in a torn line or an incomplete batch; every
    /// complete batch before it is in `state`.
    pub tail_error: Option<CatalogueError>,
}

struct Pending {
    file: FileMetadata,
    events: Vec<EventMetadata>,
    line: usize,
}

/// Rebuilds catalogue state from a log.
///
/// Duplicate records are skipped. A malformed record is tolerated only as
/// the final line; anywhere else it fails with `CorruptLog`.
pub fn restore(reader: impl BufRead, chunk_duration_ns: u64) -> Result<Restored, CatalogueError> {
    let mut state = CatalogueState::new(chunk_duration_ns);
    let mut pending: Option<Pending> = None;
    let mut offset = 0u64;
    let mut valid_len = 0u64;
    let mut torn: Option<usize> = None;

    let mut reader = reader;
    let mut line = Vec::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader
            .read_until(b'\n', &mut line)
            .map_err(CatalogueError::Io)?;
        if n == 0 {
            break;
        }
        lineno += 1;
        offset += n as u64;
        let is_last =
            !line.ends_with(b"\n") || reader.fill_buf().map_err(CatalogueError::Io)?.is_empty();
        if line.iter().all(u8::is_ascii_whitespace) {
            if pending.is_none() {
                valid_len = offset;
            }
            continue;
        }

        let record = match serde_json::from_slice::<LogRecord>(&line) {
            Ok(r) => r,
            Err(_) if is_last => {
                torn = Some(lineno);
                break;
            }
            Err(_) => return Err(CatalogueError::CorruptLog { line: lineno }),
        };

        match record {
            LogRecord::File(file) => {
                if pending.is_some() {
                    return Err(CatalogueError::CorruptLog { line: lineno });
                }
                if state.contains(&file.sha256) {
                    // duplicate batch; its event lines are skipped below
                    valid_len = offset;
                    continue;
                }
                pending = Some(Pending {
                    file,
                    events: Vec::new(),
                    line: lineno,
                });
            }
            LogRecord::Event {
                sha256,
                idx,
                ts,
                attrs,
            } => {
                let Some(p) = pending.as_mut().filter(|p| p.file.sha256 == sha256) else {
                    if state.contains(&sha256) {
                        if pending.is_none() {
                            valid_len = offset;
                        }
                        continue;
                    }
                    return Err(CatalogueError::CorruptLog { line: lineno });
                };
                if p.events.last().is_some_and(|e| e.event_index == idx) {
                    continue;
                }
                p.events.push(EventMetadata {
                    file_sha256: sha256,
                    event_index: idx,
                    timestamp_ns: ts,
                    attrs,
                });
            }
        }

        if let Some(p) = pending.take_if(|p| p.events.len() as u64 == p.file.event_count) {
            CatalogueState::check_batch(&p.file, &p.events)
                .map_err(|_| CatalogueError::CorruptLog { line: p.line })?;
            state.apply(p.file, p.events);
            valid_len = offset;
        }
    }

    let tail_error = match (torn, pending) {
        (Some(line), _) => Some(CatalogueError::CorruptLog { line }),
        (None, Some(p)) => Some(CatalogueError::CorruptLog { line: p.line }),
        (None, None) => None,
    };
    Ok(Restored {
        state,
        valid_len,
        tail_error,
    })
}
