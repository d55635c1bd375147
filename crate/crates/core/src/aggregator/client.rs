use std::time::Duration;

use serde::de::DeserializeOwned;

use super::http::QueryAccepted;
use super::{CollectionManifest, SourceStatus};
use crate::catalogue::Query;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("aggregator unreachable: {0}")]
    Unreachable(String),
    /// A non-success answer; `message` is the server's error text.
    #[error("aggregator answered {status}: {message}")]
    Status { status: u16, message: String },
    #[error("aggregator protocol error: {0}")]
    Protocol(String),
}

/// Blocking client for the aggregator's HTTP API.
pub struct AggregatorClient {
    base_url: String,
    agent: ureq::Agent,
}

const MAX_BODY_BYTES: u64 = 1 << 31;

impl AggregatorClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(5)))
            .timeout_global(Some(Duration::from_secs(600)))
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent: config.into(),
        }
    }

    fn finish(
        url: &str,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<(u16, Vec<u8>), ClientError> {
        let mut resp = result.map_err(|e| match e {
            ureq::Error::Io(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::HostNotFound
            | ureq::Error::Timeout(_) => ClientError::Unreachable(format!("{url}: {e}")),
            other => ClientError::Protocol(format!("{url}: {other}")),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_vec()
            .map_err(|e| ClientError::Unreachable(format!("{url}: {e}")))?;
        if (200..300).contains(&status) {
            return Ok((status, body));
        }
        let message = serde_json::from_slice::<serde_json::Value>(&body)
            .ok()
            .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
            .unwrap_or_else(|| String::from_utf8_lossy(&body).into_owned());
        Err(ClientError::Status { status, message })
    }

    fn get_bytes(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        let url = format!("{}{}", self.base_url, path);
        Ok(Self::finish(&url, self.agent.get(&url).call())?.1)
    }

    fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        serde_json::from_slice(&self.get_bytes(path)?)
            .map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn submit_query(&self, q: &Query) -> Result<QueryAccepted, ClientError> {
        let url = format!("{}/api/v1/queries", self.base_url);
        let body = serde_json::to_vec(q).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let result = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(&body[..]);
        let (_, body) = Self::finish(&url, result)?;
        serde_json::from_slice(&body).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn collection(&self, id: &str) -> Result<CollectionManifest, ClientError> {
        self.get_json(&format!("/api/v1/collections/{id}"))
    }

    pub fn collection_file(&self, id: &str, entry_path: &str) -> Result<Vec<u8>, ClientError> {
        self.get_bytes(&format!("/api/v1/collections/{id}/files/{entry_path}"))
    }

    pub fn sources(&self) -> Result<Vec<SourceStatus>, ClientError> {
        self.get_json("/api/v1/sources")
    }

    pub fn health(&self) -> Result<(), ClientError> {
        self.get_bytes("/api/v1/health").map(|_| ())
    }
}
