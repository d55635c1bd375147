use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::AdapterError;
use super::catalog::{CatalogEntry, ContentCatalog, is_canonical_path};
use crate::digest::Sha256Digest;

pub const CATALOG_FILE: &str = "catalog.json";
const OBJECTS_DIR: &str = "objects";

/// Objects stored by digest under `<dir>/<hex[..2]>/<hex>`.
#[derive(Debug, Clone)]
pub struct ObjectStore {
    dir: PathBuf,
}

impl ObjectStore {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn object_path(&self, digest: &Sha256Digest) -> PathBuf {
        let hex = digest.to_hex();
        self.dir.join(&hex[..2]).join(hex)
    }

    pub fn contains(&self, digest: &Sha256Digest) -> bool {
        self.object_path(digest).is_file()
    }

    /// Stores `bytes` unless an object with the same digest exists.
    pub fn put(&self, bytes: &[u8]) -> io::Result<Sha256Digest> {
        let digest = Sha256Digest::of(bytes);
        let target = self.object_path(&digest);
        if !target.is_file() {
            let parent = target.parent().expect("object paths have a parent");
            fs::create_dir_all(parent)?;
            let tmp = parent.join(format!(".{}.tmp", digest.to_hex()));
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, &target)?;
        }
        Ok(digest)
    }

    pub fn get(&self, digest: &Sha256Digest) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.object_path(digest)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Digests of every stored object.
    pub fn digests(&self) -> io::Result<Vec<Sha256Digest>> {
        let mut out = Vec::new();
        for entry in WalkDir::new(&self.dir).min_depth(2).max_depth(2) {
            let entry = entry.map_err(io::Error::other)?;
            if let Some(d) = entry.file_name().to_str().and_then(|n| n.parse().ok()) {
                out.push(d);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn len(&self) -> io::Result<usize> {
        Ok(self.digests()?.len())
    }

    pub fn is_empty(&self) -> io::Result<bool> {
        Ok(self.len()? == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishReport {
    pub entries: usize,
    pub objects: usize,
    pub bytes: u64,
    pub skipped: Vec<SkippedFile>,
}

/// A published storage: its catalog plus the objects it references.
#[derive(Debug, Clone)]
pub struct Published {
    pub catalog: ContentCatalog,
    pub catalog_bytes: Vec<u8>,
    pub store: ObjectStore,
}

impl Published {
    /// Loads the output of an earlier [`publish`].
    pub fn load(dir: &Path) -> Result<Self, AdapterError> {
        let catalog_bytes = fs::read(dir.join(CATALOG_FILE))?;
        let catalog: ContentCatalog = serde_json::from_slice(&catalog_bytes)
            .map_err(|e| AdapterError::InvalidCatalog(e.to_string()))?;
        catalog.validate().map_err(AdapterError::InvalidCatalog)?;
        Ok(Self {
            catalog,
            catalog_bytes,
            store: ObjectStore::open(dir.join(OBJECTS_DIR))?,
        })
    }
}

fn relative_path(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Option<Vec<&str>> = rel.components().map(|c| c.as_os_str().to_str()).collect();
    let joined = parts?.join("/");
    is_canonical_path(&joined).then_some(joined)
}

/// Snapshots every regular file under `root` into a content-addressed
/// store at `out_dir`. The source tree is only read.
///
/// `generated_at_ns` is the newest modification time among the published
/// files, so an untouched tree republishes to identical catalog bytes.
pub fn publish(
    root: &Path,
    source_id: u16,
    source_name: &str,
    out_dir: &Path,
) -> Result<(Published, PublishReport), AdapterError> {
    if !crate::mdd::is_identifier(source_name) {
        return Err(AdapterError::InvalidSourceName(source_name.to_string()));
    }
    let root = root.canonicalize()?;
    if !root.is_dir() {
        return Err(AdapterError::Io(io::Error::new(
            io::ErrorKind::NotADirectory,
            format!("{} is not a directory", root.display()),
        )));
    }
    fs::create_dir_all(out_dir)?;
    let out_dir = out_dir.canonicalize()?;
    if out_dir.starts_with(&root) {
        return Err(AdapterError::OutputInsideRoot);
    }

    let store = ObjectStore::open(out_dir.join(OBJECTS_DIR))?;
    let mut entries = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut newest = 0u64;

    for item in WalkDir::new(&root).follow_links(false) {
        let item = match item {
            Ok(i) => i,
            Err(e) => {
                let path = e
                    .path()
                    .and_then(|p| relative_path(&root, p))
                    .unwrap_or_default();
                skipped.push(SkippedFile {
                    path,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if !item.file_type().is_file() {
            continue;
        }
        let Some(rel) = relative_path(&root, item.path()) else {
            skipped.push(SkippedFile {
                path: item.path().to_string_lossy().into_owned(),
                reason: "path is not valid UTF-8".into(),
            });
            continue;
        };
        let read = fs::read(item.path()).and_then(|bytes| {
            let mtime = item
                .metadata()
                .map_err(io::Error::other)?
                .modified()?
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            Ok((bytes, mtime))
        });
        match read {
            Ok((bytes, mtime)) => {
                let sha256 = store.put(&bytes)?;
                newest = newest.max(mtime);
                entries.insert(
                    rel.clone(),
                    CatalogEntry {
                        path: rel,
                        size: bytes.len() as u64,
                        sha256,
                    },
                );
            }
            Err(e) => skipped.push(SkippedFile {
                path: rel,
                reason: e.to_string(),
            }),
        }
    }

    let catalog = ContentCatalog {
        source_id,
        source_name: source_name.to_string(),
        generated_at_ns: newest,
        entries: entries.into_values().collect(),
    };
    let catalog_bytes = catalog.to_json_bytes();
    let tmp = out_dir.join(".catalog.json.tmp");
    fs::write(&tmp, &catalog_bytes)?;
    fs::rename(&tmp, out_dir.join(CATALOG_FILE))?;

    let report = PublishReport {
        entries: catalog.entries.len(),
        objects: catalog.distinct_objects(),
        bytes: catalog.entries.iter().map(|e| e.size).sum(),
        skipped,
    };
    Ok((
        Published {
            catalog,
            catalog_bytes,
            store,
        },
        report,
    ))
}
