use serde::{Deserialize, Serialize};

use crate::digest::Sha256Digest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub path: String,
    pub size: u64,
    pub sha256: Sha256Digest,
}

/// Point-in-time listing of a published storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentCatalog {
    pub source_id: u16,
    pub source_name: String,
    pub generated_at_ns: u64,
    pub entries: Vec<CatalogEntry>,
}

/// Relative, forward-slash, no empty / `.` / `..` segments.
pub fn is_canonical_path(path: &str) -> bool {
    !path.is_empty()
        && !path.contains('\\')
        && path
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != "..")
}

impl ContentCatalog {
    /// The bytes served at the catalog endpoint and written by `publish`.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(self).expect("catalog serializes");
        out.push(b'\n');
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        for e in &self.entries {
            if !is_canonical_path(&e.path) {
                return Err(format!("non-canonical path {:?}", e.path));
            }
        }
        if let Some(w) = self.entries.windows(2).find(|w| w[0].path >= w[1].path) {
            return Err(format!("entries out of order at {:?}", w[1].path));
        }
        Ok(())
    }

    pub fn entry(&self, path: &str) -> Option<&CatalogEntry> {
        self.entries
            .binary_search_by(|e| e.path.as_str().cmp(path))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn distinct_objects(&self) -> usize {
        let mut digests: Vec<_> = self.entries.iter().map(|e| e.sha256).collect();
        digests.sort_unstable();
        digests.dedup();
        digests.len()
    }
}
