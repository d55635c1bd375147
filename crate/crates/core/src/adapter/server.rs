use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};

use axum::Json;
use axum::Router;
use axum::extract::{Path, State};
use axum::http::{StatusCode, header};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use serde::{Deserialize, Serialize};

use super::publish::Published;
use crate::digest::Sha256Digest;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeStats {
    pub objects_served: u64,
    pub bytes_served: u64,
}

/// Read-only view over a published storage.
pub struct AdapterService {
    published: Published,
    objects_served: AtomicU64,
    bytes_served: AtomicU64,
}

impl AdapterService {
    pub fn new(published: Published) -> Arc<Self> {
        Arc::new(Self {
            published,
            objects_served: AtomicU64::new(0),
            bytes_served: AtomicU64::new(0),
        })
    }

    pub fn stats(&self) -> ServeStats {
        ServeStats {
            objects_served: self.objects_served.load(Ordering::Relaxed),
            bytes_served: self.bytes_served.load(Ordering::Relaxed),
        }
    }

    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/api/v1/health", get(health))
            .route("/api/v1/catalog", get(catalog))
            .route("/api/v1/objects/{digest}", get(object))
            .route("/api/v1/stats", get(stats))
            .with_state(self.clone())
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

pub(crate) async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn catalog(State(svc): State<Arc<AdapterService>>) -> Response {
    (
        [(header::CONTENT_TYPE, "application/json")],
        svc.published.catalog_bytes.clone(),
    )
        .into_response()
}

async fn stats(State(svc): State<Arc<AdapterService>>) -> Json<ServeStats> {
    Json(svc.stats())
}

async fn object(State(svc): State<Arc<AdapterService>>, Path(raw): Path<String>) -> Response {
    let Ok(digest) = raw.parse::<Sha256Digest>() else {
        return error(StatusCode::BAD_REQUEST, format!("malformed digest {raw:?}"));
    };
    let store = svc.published.store.clone();
    let read = tokio::task::spawn_blocking(move || store.get(&digest)).await;
    match read {
        Ok(Ok(Some(bytes))) => {
            if Sha256Digest::of(&bytes) != digest {
                tracing::error!(%digest, "stored object does not match its digest");
                return error(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "stored object is corrupt",
                );
            }
            svc.objects_served.fetch_add(1, Ordering::Relaxed);
            svc.bytes_served
                .fetch_add(bytes.len() as u64, Ordering::Relaxed);
            ([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response()
        }
        Ok(Ok(None)) => error(StatusCode::NOT_FOUND, format!("no object {digest}")),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
