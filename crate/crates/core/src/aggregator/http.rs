//! HTTP face of the aggregator.
//!
//! | method | path | answer |
//! |---|---|---|
//! | POST | `/api/v1/queries` | 201 `{collection_id, manifest_url, entries, events}` |
//! | GET | `/api/v1/collections/{id}` | the manifest |
//! | GET | `/api/v1/collections/{id}/files/{path}` | entry bytes |
//! | GET | `/api/v1/sources` | per-source status |
//! | GET | `/api/v1/health` | `{"status":"ok"}` |

use std::sync::Arc;

use axum::Json;
use axum::Router;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{StatusCode, header};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use serde::{Deserialize, Serialize};

use super::{Aggregator, AggregatorError};
use crate::catalogue::Query;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAccepted {
    pub collection_id: String,
    pub manifest_url: String,
    pub entries: u64,
    pub events: u64,
}

impl AggregatorError {
    pub fn status(&self) -> StatusCode {
        match self {
            AggregatorError::InvalidQuery(_) => StatusCode::BAD_REQUEST,
            AggregatorError::UnknownCollection(_)
            | AggregatorError::UnknownPath(_)
            | AggregatorError::UnknownSource(_) => StatusCode::NOT_FOUND,
            AggregatorError::AdapterUnreachable(_)
            | AggregatorError::Upstream(_)
            | AggregatorError::SourceMismatch { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for AggregatorError {
    fn into_response(self) -> Response {
        let status = self.status();
        (
            status,
            Json(serde_json::json!({ "error": self.to_string() })),
        )
            .into_response()
    }
}

pub fn router(aggregator: Arc<Aggregator>) -> Router {
    Router::new()
        .route("/api/v1/health", get(crate::adapter::health))
        .route("/api/v1/queries", post(submit_query))
        .route("/api/v1/collections/{id}", get(collection))
        .route(
            "/api/v1/collections/{id}/files/{*path}",
            get(collection_file),
        )
        .route("/api/v1/sources", get(sources))
        .with_state(aggregator)
}

/// Runs blocking aggregator work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, AggregatorError> + Send + 'static,
) -> Result<T, AggregatorError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AggregatorError::Io(std::io::Error::other(e)))?
}

async fn submit_query(State(agg): State<Arc<Aggregator>>, body: Bytes) -> Response {
    let q: Query = match serde_json::from_slice(&body) {
        Ok(q) => q,
        Err(e) => return AggregatorError::InvalidQuery(e.to_string()).into_response(),
    };
    match blocking(move || agg.handle_query(&q)).await {
        Ok(m) => (
            StatusCode::CREATED,
            Json(QueryAccepted {
                manifest_url: format!("/api/v1/collections/{}", m.collection_id),
                entries: m.entries.len() as u64,
                events: m.total_events(),
                collection_id: m.collection_id,
            }),
        )
            .into_response(),
        Err(e) => e.into_response(),
    }
}

async fn collection(State(agg): State<Arc<Aggregator>>, Path(id): Path<String>) -> Response {
    match blocking(move || agg.get_collection(&id)).await {
        Ok(m) => Json(m).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn collection_file(
    State(agg): State<Arc<Aggregator>>,
    Path((id, path)): Path<(String, String)>,
) -> Response {
    match blocking(move || agg.get_collection_file(&id, &path)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn sources(State(agg): State<Arc<Aggregator>>) -> Response {
    match blocking(move || Ok(agg.sources_status())).await {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}
