//! Metadata-driven distributed storage for binary event data.
//!
//! - [`mdd`]: metadata description files declaring binary layouts.
//! - [`extractor`]: schema-driven metadata extraction and event-subset files.
//! - [`catalogue`]: time-chunked metadata catalogue with pruning and a durable log.
//! - [`adapter`]: read-only content-addressed export of a storage, and a caching client.
//! - [`aggregator`]: query federation, collection manifests and lazy materialization.
//! - [`synth`]: deterministic synthetic corpora.

pub mod adapter;
pub mod aggregator;
pub mod catalogue;
pub mod digest;
pub mod extractor;
pub mod http;
pub mod mdd;
pub mod synth;

pub use digest::Sha256Digest;
