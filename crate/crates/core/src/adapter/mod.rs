//! Read-only, content-addressed export of a local storage.
//!
//! [`publish`] snapshots a directory tree into a catalog plus a deduplicated
//! object store without touching the tree. [`AdapterService`] serves the
//! result over HTTP, and [`CachingClient`] is the consumer side: it verifies
//! every object against its digest and keeps a byte-budgeted LRU cache.

mod catalog;
mod client;
mod publish;
mod server;

use std::io;

pub use catalog::{CatalogEntry, ContentCatalog, is_canonical_path};
pub use client::{CacheStats, CachingClient, FetchError, HttpTransport, ObjectTransport};
pub use publish::{CATALOG_FILE, ObjectStore, PublishReport, Published, SkippedFile, publish};
pub(crate) use server::health;
pub use server::{AdapterService, ServeStats};

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("publish output directory lies inside the published root")]
    OutputInsideRoot,
    #[error("source name {0:?} is not an identifier")]
    InvalidSourceName(String),
    #[error("invalid catalog: {0}")]
    InvalidCatalog(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
