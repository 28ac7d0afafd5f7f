//! Local HTTP service for labeling generated audio descriptions.
//!
//! | method | path                          | body / result                        |
//! |--------|-------------------------------|--------------------------------------|
//! | GET    | `/api/samples/next?after=ID`  | `{sample, complete}`                 |
//! | GET    | `/api/samples/{id}`           | sample record                        |
//! | PUT    | `/api/samples/{id}/annotation`| [`AnnotationRequest`] → annotation   |
//! | GET    | `/api/progress`               | [`Progress`]                         |
//! | GET    | `/api/audio/{id}`             | audio bytes, range requests honored  |
//! | GET    | `/`                           | UI bundle                            |
//!
//! Errors are `{"error": "..."}` with 404 for unknown ids and 422 for labels
//! that break the type-iff-hallucinated rule.

pub mod store;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Redirect, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use serde::Deserialize;
use tower::ServiceExt;
use tower_http::services::{ServeDir, ServeFile};

pub use store::{AnnotationRequest, AnnotationStore, NextSample, Progress, StoreError};

const PLACEHOLDER_UI: &str = include_str!("../assets/index.html");

pub struct App {
    pub store: AnnotationStore,
    /// Base directory for relative `audio_ref`s.
    pub audio_root: PathBuf,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub corpus: PathBuf,
    /// Defaults to the corpus file's directory.
    pub audio_root: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub rewrite_every: usize,
}

impl ServiceConfig {
    pub fn new(corpus: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            corpus: corpus.into(),
            audio_root: None,
            ui_dir: None,
            rewrite_every: store::DEFAULT_REWRITE_EVERY,
        }
    }

    pub fn open(&self) -> Result<Arc<App>, StoreError> {
        let store = AnnotationStore::open(&self.corpus, self.rewrite_every)?;
        let audio_root = self.audio_root.clone().unwrap_or_else(|| {
            self.corpus
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."))
                .to_path_buf()
        });
        Ok(Arc::new(App { store, audio_root }))
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        use audiohall::corpus::CorpusError;
        let status = match &e {
            StoreError::UnknownSample(_) | StoreError::Corpus(CorpusError::UnknownSample(_)) => {
                StatusCode::NOT_FOUND
            }
            StoreError::Invalid(_) | StoreError::Corpus(CorpusError::InconsistentAnnotation(_)) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError(status, e.to_string())
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown sample id {id:?}"))
}

pub fn router(app: Arc<App>, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/samples/next", get(next_sample))
        .route("/api/samples/{id}", get(get_sample))
        .route("/api/samples/{id}/annotation", put(put_annotation))
        .route("/api/progress", get(progress))
        .route("/api/audio/{id}", get(audio))
        .with_state(app);
    match ui_dir {
        Some(dir) => api.fallback_service(
            ServeDir::new(dir).not_found_service(ServeFile::new(dir.join("index.html"))),
        ),
        None => api
            .route("/", get(|| async { Html(PLACEHOLDER_UI) }))
            .fallback(|| async { ApiError(StatusCode::NOT_FOUND, "no such route".into()) }),
    }
}

#[derive(Deserialize)]
struct NextQuery {
    after: Option<String>,
}

async fn next_sample(State(app): State<Arc<App>>, Query(q): Query<NextQuery>) -> Result<Json<NextSample>, ApiError> {
    Ok(Json(app.store.next_unlabeled(q.after.as_deref())?))
}

async fn get_sample(State(app): State<Arc<App>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let sample = app.store.get(&id).ok_or_else(|| not_found(&id))?;
    Ok(Json(sample).into_response())
}

async fn put_annotation(
    State(app): State<Arc<App>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: AnnotationRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, format!("invalid annotation body: {e}")))?;
    // fsync happens under the writer lock; keep it off the async workers
    let stored = tokio::task::spawn_blocking(move || app.store.put(&id, req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(stored).into_response())
}

async fn progress(State(app): State<Arc<App>>) -> Json<Progress> {
    Json(app.store.progress())
}

async fn audio(State(app): State<Arc<App>>, UrlPath(id): UrlPath<String>, req: Request) -> Result<Response, ApiError> {
    let sample = app.store.get(&id).ok_or_else(|| not_found(&id))?;
    let r = sample.audio_ref.as_str();
    if r.starts_with("http://") || r.starts_with("https://") {
        return Ok(Redirect::temporary(r).into_response());
    }
    let path = app.audio_root.join(r);
    if !path.is_file() {
        return Err(ApiError(
            StatusCode::NOT_FOUND,
            format!("audio for {id:?} not found at {}", path.display()),
        ));
    }
    let res = ServeFile::new(path)
        .oneshot(req)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(res.map(Body::new))
}

/// Serves until ctrl-c, then writes any pending labels to the corpus file.
pub async fn serve(cfg: ServiceConfig, addr: SocketAddr) -> Result<(), ServeError> {
    let app = cfg.open()?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, corpus = %cfg.corpus.display(), "annotation service listening");
    axum::serve(listener, router(Arc::clone(&app), cfg.ui_dir.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    app.store.flush()?;
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}
