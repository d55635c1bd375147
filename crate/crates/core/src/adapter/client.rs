use std::collections::HashMap;
use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use bytes::Bytes;
use lru::LruCache;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::catalog::ContentCatalog;
use crate::digest::Sha256Digest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FetchError {
    #[error("object {expected} arrived with digest {actual}")]
    DigestMismatch {
        expected: Sha256Digest,
        actual: Sha256Digest,
    },
    #[error("adapter unreachable: {0}")]
    Unreachable(String),
    #[error("adapter has no object {0}")]
    NotFound(Sha256Digest),
    #[error("adapter protocol error: {0}")]
    Protocol(String),
}

/// How the client talks to an adapter.
pub trait ObjectTransport: Send + Sync {
    fn catalog(&self) -> Result<ContentCatalog, FetchError>;
    fn object(&self, digest: &Sha256Digest) -> Result<Vec<u8>, FetchError>;
}

/// The adapter's HTTP API.
pub struct HttpTransport {
    base_url: String,
    agent: ureq::Agent,
}

const MAX_OBJECT_BYTES: u64 = 1 << 30;

impl HttpTransport {
    pub fn new(base_url: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(5)))
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: config.into(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn get(&self, path: &str) -> Result<(u16, Vec<u8>), FetchError> {
        let url = format!("{}{}", self.base_url, path);
        let mut resp = self.agent.get(&url).call().map_err(|e| match e {
            ureq::Error::Io(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::HostNotFound
            | ureq::Error::Timeout(_) => FetchError::Unreachable(format!("{url}: {e}")),
            other => FetchError::Protocol(format!("{url}: {other}")),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_OBJECT_BYTES)
            .read_to_vec()
            .map_err(|e| FetchError::Unreachable(format!("{url}: {e}")))?;
        Ok((status, body))
    }
}

impl ObjectTransport for HttpTransport {
    fn catalog(&self) -> Result<ContentCatalog, FetchError> {
        let (status, body) = self.get("/api/v1/catalog")?;
        if status != 200 {
            return Err(FetchError::Protocol(format!(
                "catalog request returned {status}"
            )));
        }
        let catalog: ContentCatalog =
            serde_json::from_slice(&body).map_err(|e| FetchError::Protocol(e.to_string()))?;
        catalog.validate().map_err(FetchError::Protocol)?;
        Ok(catalog)
    }

    fn object(&self, digest: &Sha256Digest) -> Result<Vec<u8>, FetchError> {
        let (status, body) = self.get(&format!("/api/v1/objects/{digest}"))?;
        match status {
            200 => Ok(body),
            404 => Err(FetchError::NotFound(*digest)),
            s => Err(FetchError::Protocol(format!("object request returned {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub bytes_fetched: u64,
    pub evictions: u64,
    pub resident_bytes: u64,
    pub resident_objects: u64,
    pub budget_bytes: u64,
}

struct Resident {
    lru: LruCache<Sha256Digest, Bytes>,
    bytes: u64,
}

/// Digest-verifying object client with a byte-budgeted LRU cache.
///
/// Only [`fetch`](Self::fetch) and [`fetch_transient`](Self::fetch_transient)
/// move object bytes; `bytes_fetched` counts exactly those transfers.
pub struct CachingClient {
    transport: Arc<dyn ObjectTransport>,
    budget: u64,
    resident: Mutex<Resident>,
    in_flight: Mutex<HashMap<Sha256Digest, Arc<Mutex<()>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    bytes_fetched: AtomicU64,
    evictions: AtomicU64,
}

impl CachingClient {
    pub fn new(transport: Arc<dyn ObjectTransport>, budget_bytes: u64) -> Self {
        Self {
            transport,
            budget: budget_bytes,
            resident: Mutex::new(Resident {
                lru: LruCache::unbounded(),
                bytes: 0,
            }),
            in_flight: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            bytes_fetched: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    pub fn http(base_url: impl Into<String>, budget_bytes: u64) -> Self {
        Self::new(Arc::new(HttpTransport::new(base_url)), budget_bytes)
    }

    pub fn catalog(&self) -> Result<ContentCatalog, FetchError> {
        self.transport.catalog()
    }

    pub fn stats(&self) -> CacheStats {
        let resident = self.resident.lock();
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            bytes_fetched: self.bytes_fetched.load(Ordering::SeqCst),
            evictions: self.evictions.load(Ordering::SeqCst),
            resident_bytes: resident.bytes,
            resident_objects: resident.lru.len() as u64,
            budget_bytes: self.budget,
        }
    }

    pub fn is_resident(&self, digest: &Sha256Digest) -> bool {
        self.resident.lock().lru.contains(digest)
    }

    fn lookup(&self, digest: &Sha256Digest) -> Option<Bytes> {
        let hit = self.resident.lock().lru.get(digest).cloned();
        if hit.is_some() {
            self.hits.fetch_add(1, Ordering::SeqCst);
        }
        hit
    }

    fn download(&self, digest: &Sha256Digest) -> Result<Bytes, FetchError> {
        let bytes = self.transport.object(digest)?;
        self.misses.fetch_add(1, Ordering::SeqCst);
        self.bytes_fetched
            .fetch_add(bytes.len() as u64, Ordering::SeqCst);
        let actual = Sha256Digest::of(&bytes);
        if actual != *digest {
            return Err(FetchError::DigestMismatch {
                expected: *digest,
                actual,
            });
        }
        Ok(Bytes::from(bytes))
    }

    fn admit(&self, digest: Sha256Digest, bytes: Bytes) {
        let size = bytes.len() as u64;
        if size > self.budget {
            return;
        }
        let mut resident = self.resident.lock();
        while resident.bytes + size > self.budget {
            match resident.lru.pop_lru() {
                Some((_, evicted)) => {
                    resident.bytes -= evicted.len() as u64;
                    self.evictions.fetch_add(1, Ordering::SeqCst);
                }
                None => break,
            }
        }
        resident.bytes += size;
        resident.lru.put(digest, bytes);
    }

    /// Returns the verified object, from cache when resident.
    ///
    /// Concurrent misses on the same digest share one transfer.
    pub fn fetch(&self, digest: &Sha256Digest) -> Result<Bytes, FetchError> {
        if let Some(b) = self.lookup(digest) {
            return Ok(b);
        }
        let gate = self.in_flight.lock().entry(*digest).or_default().clone();
        let _guard = gate.lock();
        if let Some(b) = self.lookup(digest) {
            return Ok(b);
        }
        let result = self.download(digest);
        if let Ok(bytes) = &result {
            self.admit(*digest, bytes.clone());
        }
        self.in_flight.lock().remove(digest);
        result
    }

    /// Like [`fetch`](Self::fetch), but a miss does not enter the cache.
    /// Used for one-pass scans that would otherwise flush the working set.
    pub fn fetch_transient(&self, digest: &Sha256Digest) -> Result<Bytes, FetchError> {
        if let Some(b) = self.lookup(digest) {
            return Ok(b);
        }
        self.download(digest)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;
    use std::sync::atomic::AtomicUsize;

    use proptest::prelude::*;

    use super::*;

    /// In-memory transport that can corrupt payloads and counts requests.
    #[derive(Default)]
    struct MemTransport {
        objects: HashMap<Sha256Digest, Vec<u8>>,
        corrupt: bool,
        requests: AtomicUsize,
        delay: Option<Duration>,
    }

    impl MemTransport {
        fn with(objects: &[Vec<u8>]) -> Self {
            Self {
                objects: objects
                    .iter()
                    .map(|o| (Sha256Digest::of(o), o.clone()))
                    .collect(),
                ..Default::default()
            }
        }
    }

    impl ObjectTransport for MemTransport {
        fn catalog(&self) -> Result<ContentCatalog, FetchError> {
            Err(FetchError::Unreachable("no catalog".into()))
        }

        fn object(&self, digest: &Sha256Digest) -> Result<Vec<u8>, FetchError> {
            self.requests.fetch_add(1, Ordering::SeqCst);
            if let Some(d) = self.delay {
                std::thread::sleep(d);
            }
            let mut bytes = self
                .objects
                .get(digest)
                .cloned()
                .ok_or(FetchError::NotFound(*digest))?;
            if self.corrupt {
                bytes[0] ^= 0xff;
            }
            Ok(bytes)
        }
    }

    fn obj(tag: u8, size: usize) -> Vec<u8> {
        let mut v = vec![tag; size];
        v[size - 1] = tag.wrapping_add(1);
        v
    }

    #[test]
    fn second_fetch_is_a_hit() {
        let a = obj(1, 100);
        let client =
            CachingClient::new(Arc::new(MemTransport::with(std::slice::from_ref(&a))), 1000);
        let d = Sha256Digest::of(&a);
        assert_eq!(client.fetch(&d).unwrap(), a);
        assert_eq!(client.fetch(&d).unwrap(), a);
        let s = client.stats();
        assert_eq!((s.hits, s.misses, s.bytes_fetched), (1, 1, 100));
    }

    #[test]
    fn lru_eviction_under_tight_budget() {
        let (a, b) = (obj(1, 100), obj(2, 100));
        let client = CachingClient::new(Arc::new(MemTransport::with(&[a.clone(), b.clone()])), 150);
        let (da, db) = (Sha256Digest::of(&a), Sha256Digest::of(&b));
        client.fetch(&da).unwrap();
        client.fetch(&db).unwrap();
        client.fetch(&da).unwrap();
        let s = client.stats();
        assert!(s.evictions >= 1);
        assert_eq!((s.hits, s.misses), (0, 3));
        assert!(s.resident_bytes <= 150);
    }

    #[test]
    fn corrupt_bytes_are_rejected_and_not_cached() {
        let a = obj(1, 10);
        let transport = MemTransport {
            corrupt: true,
            ..MemTransport::with(std::slice::from_ref(&a))
        };
        let client = CachingClient::new(Arc::new(transport), 1000);
        let d = Sha256Digest::of(&a);
        assert!(matches!(
            client.fetch(&d),
            Err(FetchError::DigestMismatch { .. })
        ));
        assert!(!client.is_resident(&d));
        assert_eq!(client.stats().resident_bytes, 0);
    }

    #[test]
    fn unknown_digest() {
        let client = CachingClient::new(Arc::new(MemTransport::default()), 1000);
        let d: Sha256Digest = "0".repeat(64).parse().unwrap();
        assert_eq!(client.fetch(&d), Err(FetchError::NotFound(d)));
    }

    #[test]
    fn oversized_objects_pass_through() {
        let a = obj(1, 100);
        let client = CachingClient::new(Arc::new(MemTransport::with(std::slice::from_ref(&a))), 50);
        let d = Sha256Digest::of(&a);
        client.fetch(&d).unwrap();
        client.fetch(&d).unwrap();
        let s = client.stats();
        assert_eq!((s.misses, s.resident_bytes), (2, 0));
    }

    #[test]
    fn transient_fetch_does_not_populate() {
        let a = obj(1, 100);
        let client =
            CachingClient::new(Arc::new(MemTransport::with(std::slice::from_ref(&a))), 1000);
        let d = Sha256Digest::of(&a);
        client.fetch_transient(&d).unwrap();
        assert!(!client.is_resident(&d));
        client.fetch(&d).unwrap();
        client.fetch_transient(&d).unwrap();
        let s = client.stats();
        assert_eq!((s.hits, s.misses, s.bytes_fetched), (1, 2, 200));
    }

    #[test]
    fn concurrent_misses_share_one_transfer() {
        let a = obj(1, 1000);
        let transport = Arc::new(MemTransport {
            delay: Some(Duration::from_millis(50)),
            ..MemTransport::with(std::slice::from_ref(&a))
        });
        let client = Arc::new(CachingClient::new(transport.clone(), 10_000));
        let d = Sha256Digest::of(&a);
        let threads: Vec<_> = (0..8)
            .map(|_| {
                let client = client.clone();
                std::thread::spawn(move || client.fetch(&d).unwrap())
            })
            .collect();
        for t in threads {
            assert_eq!(t.join().unwrap(), a);
        }
        assert_eq!(transport.requests.load(Ordering::SeqCst), 1);
        let s = client.stats();
        assert_eq!((s.misses, s.hits, s.bytes_fetched), (1, 7, 1000));
    }

    /// Reference LRU: front is most recent.
    fn simulate(trace: &[usize], sizes: &[u64], budget: u64) -> (Vec<bool>, u64) {
        let mut order: VecDeque<usize> = VecDeque::new();
        let mut used = 0;
        let mut evictions = 0;
        let mut hits = Vec::new();
        for &k in trace {
            if let Some(pos) = order.iter().position(|&x| x == k) {
                order.remove(pos);
                order.push_front(k);
                hits.push(true);
                continue;
            }
            hits.push(false);
            if sizes[k] > budget {
                continue;
            }
            while used + sizes[k] > budget {
                let old = order.pop_back().unwrap();
                used -= sizes[old];
                evictions += 1;
            }
            used += sizes[k];
            order.push_front(k);
        }
        (hits, evictions)
    }

    proptest! {
        #[test]
        fn matches_reference_lru_and_respects_budget(
            sizes in prop::collection::vec(1u64..200, 1..6),
            trace in prop::collection::vec(0usize..6, 0..60),
            budget in 0u64..500,
        ) {
            let objects: Vec<Vec<u8>> = sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| obj(i as u8, s as usize))
                .collect();
            let trace: Vec<usize> = trace.into_iter().map(|k| k % objects.len()).collect();
            let client = CachingClient::new(Arc::new(MemTransport::with(&objects)), budget);
            let mut hits = Vec::new();
            for &k in &trace {
                let before = client.stats().hits;
                let d = Sha256Digest::of(&objects[k]);
                prop_assert_eq!(client.fetch(&d).unwrap(), objects[k].clone());
                hits.push(client.stats().hits > before);
                prop_assert!(client.stats().resident_bytes <= budget);
            }
            let (expected_hits, expected_evictions) = simulate(&trace, &sizes, budget);
            prop_assert_eq!(hits, expected_hits);
            prop_assert_eq!(client.stats().evictions, expected_evictions);
        }
    }
}
