use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalogue::{Level, Query};
use crate::digest::Sha256Digest;

/// Key-sorted, whitespace-free JSON with every optional field present.
pub fn canonicalize(q: &Query) -> String {
    let mut q = q.clone();
    for p in &mut q.predicates {
        // -0.0 and 0.0 select the same rows
        p.lo += 0.0;
        p.hi = p.hi.map(|h| h + 0.0);
    }
    let value = serde_json::to_value(&q).expect("queries serialize");
    let mut out = String::new();
    write_sorted(&value, &mut out);
    out
}

fn write_sorted(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_sorted(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_sorted(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// sha256 over the canonical query text followed by the decimal catalogue
/// generation.
pub fn collection_id(canonical_query: &str, generation: u64) -> String {
    Sha256Digest::of(format!("{canonical_query}{generation}").as_bytes()).to_hex()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_name: String,
    /// `<source_name>/<path in the source>`.
    pub path: String,
    pub event_count: u64,
    pub size: Option<u64>,
    pub sha256: Option<Sha256Digest>,
    /// Digest of the source file the entry is drawn from.
    pub origin_sha256: Sha256Digest,
    /// Selected record indices in the source file (event level only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_indices: Option<Vec<u64>>,
}

impl ManifestEntry {
    /// Path inside the originating source.
    pub fn source_path(&self) -> &str {
        self.path
            .strip_prefix(&self.source_name)
            .and_then(|p| p.strip_prefix('/'))
            .unwrap_or(&self.path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionManifest {
    pub collection_id: String,
    pub level: Level,
    pub query: Query,
    pub catalogue_generation: u64,
    pub entries: Vec<ManifestEntry>,
    pub created_at_ns: u64,
}

impl CollectionManifest {
    pub fn entry(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.path == path)
    }

    pub fn total_events(&self) -> u64 {
        self.entries.iter().map(|e| e.event_count).sum()
    }
}

pub type SharedManifest = Arc<RwLock<CollectionManifest>>;

/// Manifests by collection id, optionally mirrored to `<dir>/<id>.json`.
pub struct ManifestStore {
    dir: Option<PathBuf>,
    loaded: RwLock<HashMap<String, SharedManifest>>,
    create_lock: Mutex<()>,
}

fn is_collection_id(id: &str) -> bool {
    id.len() == 64
        && id
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl ManifestStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            loaded: RwLock::new(HashMap::new()),
            create_lock: Mutex::new(()),
        }
    }

    pub fn on_disk(dir: PathBuf) -> io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            ..Self::in_memory()
        })
    }

    pub fn get(&self, id: &str) -> io::Result<Option<SharedManifest>> {
        if let Some(m) = self.loaded.read().get(id) {
            return Ok(Some(m.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        if !is_collection_id(id) {
            return Ok(None);
        }
        let bytes = match fs::read(dir.join(format!("{id}.json"))) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let manifest: CollectionManifest =
            serde_json::from_slice(&bytes).map_err(io::Error::other)?;
        let shared = Arc::new(RwLock::new(manifest));
        Ok(Some(
            self.loaded
                .write()
                .entry(id.to_string())
                .or_insert(shared)
                .clone(),
        ))
    }

    /// Returns the stored manifest for `id`, or stores the one `build` makes.
    pub fn get_or_create(
        &self,
        id: &str,
        build: impl FnOnce() -> CollectionManifest,
    ) -> io::Result<SharedManifest> {
        let _guard = self.create_lock.lock();
        if let Some(m) = self.get(id)? {
            return Ok(m);
        }
        let manifest = build();
        self.persist(&manifest)?;
        let shared = Arc::new(RwLock::new(manifest));
        self.loaded.write().insert(id.to_string(), shared.clone());
        Ok(shared)
    }

    pub fn persist(&self, manifest: &CollectionManifest) -> io::Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let target = dir.join(format!("{}.json", manifest.collection_id));
        let tmp = dir.join(format!(".{}.tmp", manifest.collection_id));
        fs::write(
            &tmp,
            serde_json::to_vec_pretty(manifest).map_err(io::Error::other)?,
        )?;
        fs::rename(tmp, target)
    }
}
