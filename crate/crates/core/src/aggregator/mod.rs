//! The data aggregation service.
//!
//! Queries are answered from catalogue metadata alone and recorded as
//! collection manifests. File bytes only move when an entry of a collection
//! is read: file-level entries are fetched through the source's caching
//! client, event-level entries are cut down to the selected records on first
//! access and memoized.

mod client;
mod config;
pub mod http;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use bytes::Bytes;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub use client::{AggregatorClient, ClientError};
pub use config::{AggregatorConfig, CONFIG_ENV, SourceConfig};
pub use http::QueryAccepted;
pub use manifest::{
    CollectionManifest, ManifestEntry, ManifestStore, SharedManifest, canonicalize, collection_id,
};

use crate::adapter::{CacheStats, CachingClient, FetchError};
use crate::catalogue::{Catalogue, CatalogueConfig, CatalogueError, Level, Query, Recovery};
use crate::digest::Sha256Digest;
use crate::extractor::{ExtractError, extract, synthesize_subset};
use crate::mdd::MddSchema;

#[derive(Debug, thiserror::Error)]
pub enum AggregatorError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("unknown collection {0}")]
    UnknownCollection(String),
    #[error("collection has no entry {0:?}")]
    UnknownPath(String),
    #[error("unknown source {0:?}")]
    UnknownSource(String),
    #[error("adapter unreachable: {0}")]
    AdapterUnreachable(String),
    #[error("upstream adapter error: {0}")]
    Upstream(FetchError),
    #[error(
        "adapter for {source_name} publishes source_id {published}, configured as {configured}"
    )]
    SourceMismatch {
        source_name: String,
        published: u16,
        configured: u16,
    },
    #[error("stored file no longer matches its collection entry: {0}")]
    Integrity(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Catalogue(CatalogueError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CatalogueError> for AggregatorError {
    fn from(e: CatalogueError) -> Self {
        match e {
            CatalogueError::InvalidQuery(m) => AggregatorError::InvalidQuery(m),
            other => AggregatorError::Catalogue(other),
        }
    }
}

impl From<FetchError> for AggregatorError {
    fn from(e: FetchError) -> Self {
        match e {
            FetchError::Unreachable(m) => AggregatorError::AdapterUnreachable(m),
            other => AggregatorError::Upstream(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestFailure {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestionReport {
    pub source_name: String,
    /// Files newly added to the catalogue.
    pub files: u64,
    pub events: u64,
    /// Entries already catalogued plus entries that failed.
    pub skipped: u64,
    pub errors: Vec<IngestFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceStatus {
    pub source_id: u16,
    pub source_name: String,
    pub adapter_url: String,
    pub format_name: String,
    pub catalogued_files: u64,
    pub catalogued_events: u64,
    pub last_ingest: Option<IngestionReport>,
    pub cache: CacheStats,
}

struct Source {
    config: SourceConfig,
    schema: MddSchema,
    client: CachingClient,
}

type MemoSlot = Arc<Mutex<Option<Bytes>>>;

pub struct Aggregator {
    sources: Vec<Source>,
    catalogue: Catalogue,
    manifests: ManifestStore,
    subsets: Mutex<HashMap<(String, String), MemoSlot>>,
    last_ingest: Mutex<HashMap<String, IngestionReport>>,
}

fn now_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

impl Aggregator {
    /// Opens the catalogue log and manifest directory named by `config` and
    /// sets up one caching client per source.
    pub fn open(config: &AggregatorConfig) -> Result<(Self, Recovery), AggregatorError> {
        config.validate()?;
        let (catalogue, recovery) = Catalogue::open(&CatalogueConfig {
            chunk_duration_ns: config.chunk_duration_ns,
            log_path: Some(config.resolved_log_path()),
        })?;
        let manifests = ManifestStore::on_disk(config.resolved_collections_dir())?;
        let aggregator = Self::assemble(config, catalogue, manifests)?;
        Ok((aggregator, recovery))
    }

    /// Everything in memory; nothing survives the process.
    pub fn in_memory(config: &AggregatorConfig) -> Result<Self, AggregatorError> {
        config.validate()?;
        Self::assemble(
            config,
            Catalogue::in_memory(config.chunk_duration_ns),
            ManifestStore::in_memory(),
        )
    }

    fn assemble(
        config: &AggregatorConfig,
        catalogue: Catalogue,
        manifests: ManifestStore,
    ) -> Result<Self, AggregatorError> {
        let sources = config
            .sources
            .iter()
            .map(|s| {
                Ok(Source {
                    schema: s.load_schema(&config.base_dir)?,
                    client: CachingClient::http(&s.adapter_url, config.cache_budget_bytes),
                    config: s.clone(),
                })
            })
            .collect::<Result<Vec<_>, AggregatorError>>()?;
        Ok(Self {
            sources,
            catalogue,
            manifests,
            subsets: Mutex::new(HashMap::new()),
            last_ingest: Mutex::new(HashMap::new()),
        })
    }

    pub fn catalogue(&self) -> &Catalogue {
        &self.catalogue
    }

    fn source(&self, name: &str) -> Result<&Source, AggregatorError> {
        self.sources
            .iter()
            .find(|s| s.config.source_name == name)
            .ok_or_else(|| AggregatorError::UnknownSource(name.to_string()))
    }

    fn source_name_of(&self, source_id: u16) -> String {
        self.sources
            .iter()
            .find(|s| s.config.source_id == source_id)
            .map(|s| s.config.source_name.clone())
            .unwrap_or_else(|| format!("source_{source_id}"))
    }

    pub fn source_names(&self) -> Vec<String> {
        self.sources
            .iter()
            .map(|s| s.config.source_name.clone())
            .collect()
    }

    pub fn cache_stats(&self, source_name: &str) -> Result<CacheStats, AggregatorError> {
        Ok(self.source(source_name)?.client.stats())
    }

    /// Pulls every not-yet-catalogued file of a source through the
    /// extractor. A file that fails extraction is recorded and skipped.
    pub fn ingest_source(&self, source_name: &str) -> Result<IngestionReport, AggregatorError> {
        let source = self.source(source_name)?;
        let catalog = source.client.catalog()?;
        if catalog.source_id != source.config.source_id {
            return Err(AggregatorError::SourceMismatch {
                source_name: source_name.to_string(),
                published: catalog.source_id,
                configured: source.config.source_id,
            });
        }
        let mut report = IngestionReport {
            source_name: source_name.to_string(),
            ..Default::default()
        };
        for entry in &catalog.entries {
            if self.catalogue.snapshot().contains(&entry.sha256) {
                report.skipped += 1;
                continue;
            }
            let extracted = source
                .client
                .fetch_transient(&entry.sha256)
                .map_err(|e| match e {
                    FetchError::Unreachable(m) => Err(AggregatorError::AdapterUnreachable(m)),
                    other => Ok(other.to_string()),
                })
                .and_then(|bytes| {
                    extract(&bytes, &source.schema, source.config.source_id, &entry.path)
                        .map_err(|e| Ok(e.to_string()))
                });
            let (file, events) = match extracted {
                Ok(x) => x,
                Err(Ok(reason)) => {
                    tracing::warn!(source = source_name, path = %entry.path, "skipping: {reason}");
                    report.skipped += 1;
                    report.errors.push(IngestFailure {
                        path: entry.path.clone(),
                        error: reason,
                    });
                    continue;
                }
                Err(Err(fatal)) => return Err(fatal),
            };
            let count = file.event_count;
            if self.catalogue.ingest(file, events)?.inserted {
                report.files += 1;
                report.events += count;
            } else {
                report.skipped += 1;
            }
        }
        self.last_ingest
            .lock()
            .insert(source_name.to_string(), report.clone());
        Ok(report)
    }

    pub fn ingest_all(&self) -> Result<Vec<IngestionReport>, AggregatorError> {
        self.source_names()
            .iter()
            .map(|name| self.ingest_source(name))
            .collect()
    }

    /// Answers a query with a manifest built from metadata only.
    ///
    /// The same query over an unchanged catalogue yields the same
    /// collection.
    pub fn handle_query(&self, q: &Query) -> Result<CollectionManifest, AggregatorError> {
        q.validate().map_err(AggregatorError::InvalidQuery)?;
        let snapshot = self.catalogue.snapshot();
        let canonical = canonicalize(q);
        let id = collection_id(&canonical, snapshot.generation());

        let mut built: Result<(), AggregatorError> = Ok(());
        let shared = self.manifests.get_or_create(&id, || {
            let entries = match self.build_entries(&snapshot, q) {
                Ok(e) => e,
                Err(e) => {
                    built = Err(e);
                    Vec::new()
                }
            };
            CollectionManifest {
                collection_id: id.clone(),
                level: q.level,
                query: serde_json::from_str(&canonical).expect("canonical query parses"),
                catalogue_generation: snapshot.generation(),
                entries,
                created_at_ns: now_ns(),
            }
        });
        // a failed build never happens after validation, but must not be cached
        built?;
        Ok(shared?.read().clone())
    }

    fn build_entries(
        &self,
        snapshot: &crate::catalogue::CatalogueState,
        q: &Query,
    ) -> Result<Vec<ManifestEntry>, AggregatorError> {
        let mut entries = match q.level {
            Level::File => snapshot
                .query_files(q)?
                .into_iter()
                .map(|f| {
                    let source_name = self.source_name_of(f.source_id);
                    ManifestEntry {
                        path: format!("{source_name}/{}", f.path),
                        source_name,
                        event_count: f.event_count,
                        size: Some(f.size),
                        sha256: Some(f.sha256),
                        origin_sha256: f.sha256,
                        event_indices: None,
                    }
                })
                .collect::<Vec<_>>(),
            Level::Event => {
                let mut per_file: BTreeMap<Sha256Digest, (u16, String, Vec<u64>)> = BTreeMap::new();
                for r in snapshot.query_events(q)? {
                    per_file
                        .entry(r.sha256)
                        .or_insert_with(|| (r.source_id, r.path.clone(), Vec::new()))
                        .2
                        .push(r.event_index);
                }
                per_file
                    .into_iter()
                    .map(|(sha, (source_id, path, mut indices))| {
                        indices.sort_unstable();
                        let source_name = self.source_name_of(source_id);
                        ManifestEntry {
                            path: format!("{source_name}/{path}"),
                            source_name,
                            event_count: indices.len() as u64,
                            size: None,
                            sha256: None,
                            origin_sha256: sha,
                            event_indices: Some(indices),
                        }
                    })
                    .collect()
            }
        };
        entries.sort_by(|a, b| {
            (&a.source_name, &a.path, a.origin_sha256).cmp(&(
                &b.source_name,
                &b.path,
                b.origin_sha256,
            ))
        });
        Ok(entries)
    }

    pub fn get_collection(&self, id: &str) -> Result<CollectionManifest, AggregatorError> {
        let shared = self
            .manifests
            .get(id)?
            .ok_or_else(|| AggregatorError::UnknownCollection(id.to_string()))?;
        Ok(shared.read().clone())
    }

    /// Bytes of one collection entry, transferred on this call if needed.
    pub fn get_collection_file(
        &self,
        id: &str,
        entry_path: &str,
    ) -> Result<Bytes, AggregatorError> {
        let shared = self
            .manifests
            .get(id)?
            .ok_or_else(|| AggregatorError::UnknownCollection(id.to_string()))?;
        let entry = shared
            .read()
            .entry(entry_path)
            .cloned()
            .ok_or_else(|| AggregatorError::UnknownPath(entry_path.to_string()))?;
        let source = self.source(&entry.source_name)?;

        let Some(indices) = &entry.event_indices else {
            return Ok(source.client.fetch(&entry.origin_sha256)?);
        };

        let slot = self
            .subsets
            .lock()
            .entry((id.to_string(), entry_path.to_string()))
            .or_default()
            .clone();
        let mut slot = slot.lock();
        if let Some(bytes) = slot.as_ref() {
            return Ok(bytes.clone());
        }
        let original = source.client.fetch(&entry.origin_sha256)?;
        let subset = synthesize_subset(&original, &source.schema, indices)
            .map_err(|e: ExtractError| AggregatorError::Integrity(format!("{entry_path}: {e}")))?;
        let digest = Sha256Digest::of(&subset);
        let size = subset.len() as u64;

        let mut manifest = shared.write();
        let stored = manifest
            .entries
            .iter_mut()
            .find(|e| e.path == entry_path)
            .expect("entry exists");
        match stored.sha256 {
            Some(previous) if previous != digest => {
                return Err(AggregatorError::Integrity(format!(
                    "{entry_path}: rebuilt subset differs from the recorded one"
                )));
            }
            Some(_) => {}
            None => {
                stored.size = Some(size);
                stored.sha256 = Some(digest);
                self.manifests.persist(&manifest)?;
            }
        }
        drop(manifest);

        let bytes = Bytes::from(subset);
        *slot = Some(bytes.clone());
        Ok(bytes)
    }

    pub fn sources_status(&self) -> Vec<SourceStatus> {
        let snapshot = self.catalogue.snapshot();
        let last = self.last_ingest.lock();
        self.sources
            .iter()
            .map(|s| {
                let (files, events) = snapshot
                    .files()
                    .filter(|f| f.source_id == s.config.source_id)
                    .fold((0, 0), |(n, e), f| (n + 1, e + f.event_count));
                SourceStatus {
                    source_id: s.config.source_id,
                    source_name: s.config.source_name.clone(),
                    adapter_url: s.config.adapter_url.clone(),
                    format_name: s.schema.format_name().to_string(),
                    catalogued_files: files,
                    catalogued_events: events,
                    last_ingest: last.get(&s.config.source_name).cloned(),
                    cache: s.client.stats(),
                }
            })
            .collect()
    }
}
