//! HTTP JSON API backing the corner annotation workflow, under `/api/v1`.
//!
//! | method | path                               | body / query                         |
//! |--------|------------------------------------|--------------------------------------|
//! | GET    | `/frames`                          |                                      |
//! | GET    | `/image/{frame}/{modality}`        | PNG response                         |
//! | GET    | `/cloud/{frame}`                   | `?max_points=&stride=`               |
//! | GET    | `/annotations/{frame}`             |                                      |
//! | PUT    | `/annotations/{frame}`             | `{"camera", "corners", "revision"}`  |
//! | POST   | `/solve`                           | `{"camera", "frames"?}` → job id     |
//! | GET    | `/jobs/{id}`                       |                                      |
//! | GET    | `/overlay/{frame}`                 | `?camera=&extrinsics=&max_points=`   |
//!
//! Annotation files are the only mutable state. Writes to one file are serialized;
//! reads never wait on a solve, which runs on the blocking thread pool.

mod handlers;
mod jobs;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex, RwLock};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

pub use handlers::{AnnotationUpdate, CornerResidual, OverlayResponse, SolveRequest};
pub use jobs::{Job, JobStatus, SolveSummary};

use crate::dataset::Dataset;
use crate::CliError;

pub struct AppState {
    pub dataset: Dataset,
    write_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    jobs: RwLock<BTreeMap<u64, Job>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(dataset: Dataset) -> Self {
        Self { dataset, write_locks: Mutex::default(), jobs: RwLock::default(), next_job: AtomicU64::new(1) }
    }

    /// Lock guarding writes to one file, keyed by its path relative to the data root.
    fn write_lock(&self, key: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.write_locks.lock().expect("lock map poisoned").entry(key.to_owned()).or_default().clone()
    }
}

pub type SharedState = Arc<AppState>;

/// JSON error body `{"error", "detail"}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub detail: String,
}

impl ApiError {
    pub fn not_found(detail: impl Into<String>) -> Self {
        Self { status: StatusCode::NOT_FOUND, detail: detail.into() }
    }

    pub fn invalid(detail: impl Into<String>) -> Self {
        Self { status: StatusCode::UNPROCESSABLE_ENTITY, detail: detail.into() }
    }

    pub fn bad_request(detail: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, detail: detail.into() }
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, detail: detail.into() }
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let error = self.status.canonical_reason().unwrap_or("error").to_lowercase();
        (self.status, Json(json!({ "error": error, "detail": self.detail }))).into_response()
    }
}

pub fn router(state: SharedState) -> Router {
    let api = Router::new()
        .route("/frames", get(handlers::frames))
        .route("/image/{frame}/{modality}", get(handlers::image))
        .route("/cloud/{frame}", get(handlers::cloud))
        .route("/annotations/{frame}", get(handlers::get_annotation).put(handlers::put_annotation))
        .route("/solve", post(handlers::solve))
        .route("/jobs/{id}", get(handlers::job))
        .route("/overlay/{frame}", get(handlers::overlay));
    Router::new().nest("/api/v1", api).with_state(state)
}

/// Router over the dataset at `data`.
pub fn app(data: &Path) -> Result<Router, CliError> {
    Ok(router(Arc::new(AppState::new(Dataset::open(data)?))))
}

pub fn serve_blocking(data: &Path, bind: &str, port: u16) -> Result<(), CliError> {
    let app = app(data)?;
    let addr: SocketAddr = format!("{bind}:{port}")
        .parse()
        .map_err(|e| CliError::input(format!("bad bind address {bind}:{port}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::input(format!("cannot bind {addr}: {e}")))?;
        log::info!("serving {} on http://{addr}/api/v1", data.display());
        eprintln!("listening on http://{addr}/api/v1");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(CliError::from)
    })
}
