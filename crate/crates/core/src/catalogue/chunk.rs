use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::digest::Sha256Digest;
use crate::extractor::Attrs;

/// One event as stored in a chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub timestamp_ns: u64,
    pub source_id: u16,
    pub path: Arc<str>,
    pub event_index: u64,
    pub file_sha256: Sha256Digest,
    pub attrs: Attrs,
}

impl EventRow {
    /// Canonical result order: time, then source, path, index.
    pub fn order(&self, other: &Self) -> Ordering {
        (
            self.timestamp_ns,
            self.source_id,
            &self.path,
            self.event_index,
            self.file_sha256,
        )
            .cmp(&(
                other.timestamp_ns,
                other.source_id,
                &other.path,
                other.event_index,
                other.file_sha256,
            ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

pub type SparseIndex = BTreeMap<String, MinMax>;

/// Rows whose timestamps fall in `[id * D, (id + 1) * D)`.
#[derive(Debug, Clone)]
pub struct Chunk {
    id: u64,
    rows: Vec<EventRow>,
    sparse_index: SparseIndex,
}

impl Chunk {
    pub(crate) fn new(id: u64) -> Self {
        Self {
            id,
            rows: Vec::new(),
            sparse_index: SparseIndex::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Rows in canonical order.
    pub fn rows(&self) -> &[EventRow] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn sparse_index(&self) -> &SparseIndex {
        &self.sparse_index
    }

    pub(crate) fn insert(&mut self, mut new_rows: Vec<EventRow>) {
        for row in &new_rows {
            widen(&mut self.sparse_index, &row.attrs);
        }
        new_rows.sort_by(EventRow::order);
        let sorted_append = match (self.rows.last(), new_rows.first()) {
            (Some(last), Some(first)) => last.order(first) == Ordering::Less,
            _ => true,
        };
        self.rows.append(&mut new_rows);
        if !sorted_append {
            self.rows.sort_by(EventRow::order);
        }
    }

    /// Min/max per attribute, computed from scratch over the rows.
    pub fn recompute_index(&self) -> SparseIndex {
        let mut index = SparseIndex::new();
        for row in &self.rows {
            widen(&mut index, &row.attrs);
        }
        index
    }
}

fn widen(index: &mut SparseIndex, attrs: &Attrs) {
    for (name, value) in attrs {
        let v = value.as_f64();
        index
            .entry(name.clone())
            .and_modify(|mm| {
                mm.min = mm.min.min(v);
                mm.max = mm.max.max(v);
            })
            .or_insert(MinMax { min: v, max: v });
    }
}
