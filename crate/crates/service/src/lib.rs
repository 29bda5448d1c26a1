//! HTTP/JSON front end for labeling sessions.
//!
//! Each session lives in its own directory under the service root and is
//! reloaded from its event log on startup. Writes to one session are
//! serialized by a per-session lock; reads and other sessions proceed in
//! parallel.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

pub use axum::http::HeaderValue;

use protoseg_core::labeling::{
    is_valid_session_id, load_sessions, ClusterCard, LabelingSession, SessionSpec, SessionState,
    SessionSummary,
};
use protoseg_core::prototype::Decision;
use protoseg_core::Error as CoreError;

type SessionHandle = Arc<Mutex<LabelingSession>>;

pub struct AppState {
    root: PathBuf,
    sessions: RwLock<BTreeMap<String, SessionHandle>>,
}

impl AppState {
    /// Reloads every session found under `root`.
    pub fn load(root: &Path) -> protoseg_core::Result<Arc<Self>> {
        std::fs::create_dir_all(root).map_err(|e| CoreError::at_path(root, e))?;
        let sessions = load_sessions(root)?
            .into_iter()
            .map(|s| (s.id().to_string(), Arc::new(Mutex::new(s))))
            .collect();
        Ok(Arc::new(Self {
            root: root.to_path_buf(),
            sessions: RwLock::new(sessions),
        }))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        if !is_valid_session_id(id) {
            return Err(ApiError::session_not_found(id));
        }
        self.sessions
            .read()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn session_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id:?}"))
    }

    fn bad_body(e: serde_json::Error) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", e.to_string())
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let (status, code) = match &e {
            CoreError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            CoreError::OutOfRange { .. } => (StatusCode::NOT_FOUND, "not_found"),
            CoreError::EmptyDictionary => (StatusCode::UNPROCESSABLE_ENTITY, "empty_dictionary"),
            CoreError::InvalidArgument(_) | CoreError::DimensionMismatch { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request")
            }
            CoreError::Path { .. } | CoreError::Format { .. } | CoreError::Version { .. } | CoreError::Json(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "artifact_error")
            }
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct CardView {
    #[serde(flatten)]
    pub card: ClusterCard,
    pub thumbnail_urls: Vec<String>,
}

fn card_view(session_id: &str, card: ClusterCard) -> CardView {
    let thumbnail_urls = (0..card.representatives.len())
        .map(|j| format!("/sessions/{session_id}/clusters/{}/patches/{j}/thumbnail", card.cluster_index))
        .collect();
    CardView { card, thumbnail_urls }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictRequest {
    #[serde(flatten)]
    pub decision: Decision,
    #[serde(default)]
    pub revision: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub cluster: CardView,
    pub pending: usize,
    pub state: SessionState,
}

fn lock(handle: &SessionHandle) -> std::sync::MutexGuard<'_, LabelingSession> {
    // a panic while holding the lock cannot leave the log half-applied, since
    // state changes only after a successful append
    handle.lock().unwrap_or_else(|p| p.into_inner())
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let spec: SessionSpec = serde_json::from_slice(&body).map_err(ApiError::bad_body)?;
    let root = app.root.clone();
    let session = tokio::task::spawn_blocking(move || LabelingSession::start(&root, &spec))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let summary = session.summary();
    app.sessions
        .write()
        .expect("session table lock")
        .insert(summary.session_id.clone(), Arc::new(Mutex::new(session)));
    tracing::info!(session = %summary.session_id, k = summary.k, "session created");
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    let handles: Vec<SessionHandle> = app.sessions.read().expect("session table lock").values().cloned().collect();
    Json(handles.iter().map(|h| lock(h).summary()).collect())
}

async fn get_session(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionSummary>> {
    Ok(Json(lock(&app.session(&id)?).summary()))
}

async fn list_clusters(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Vec<CardView>>> {
    let handle = app.session(&id)?;
    let cards = lock(&handle).cards();
    Ok(Json(cards.into_iter().map(|c| card_view(&id, c)).collect()))
}

async fn get_cluster(
    State(app): State<Arc<AppState>>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
) -> ApiResult<Json<CardView>> {
    let card = lock(&app.session(&id)?).card(index)?;
    Ok(Json(card_view(&id, card)))
}

async fn get_thumbnail(
    State(app): State<Arc<AppState>>,
    UrlPath((id, index, j)): UrlPath<(String, usize, usize)>,
) -> ApiResult<Response> {
    let path = lock(&app.session(&id)?).thumbnail_path(index, j).map_err(|e| match e {
        CoreError::InvalidArgument(m) => ApiError::new(StatusCode::NOT_FOUND, "no_thumbnail", m),
        other => other.into(),
    })?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| {
        ApiError::new(StatusCode::NOT_FOUND, "no_thumbnail", format!("{}: {e}", path.display()))
    })?;
    let content_type = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        _ => "image/x-portable-pixmap",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], bytes).into_response())
}

async fn post_verdict(
    State(app): State<Arc<AppState>>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
    body: Bytes,
) -> ApiResult<Json<VerdictResponse>> {
    let req: VerdictRequest = serde_json::from_slice(&body).map_err(ApiError::bad_body)?;
    let handle = app.session(&id)?;
    let mut session = lock(&handle);
    let pending = session.decide(index, req.decision, req.revision)?;
    let card = session.card(index)?;
    Ok(Json(VerdictResponse {
        cluster: card_view(&id, card),
        pending,
        state: session.state(),
    }))
}

async fn finalize(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let handle = app.session(&id)?;
    let dict = lock(&handle).finalize()?;
    let bytes = dict.to_json_bytes()?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

/// Routes with CORS for `origin`, or for any origin when `None`.
pub fn router(app: Arc<AppState>, origin: Option<HeaderValue>) -> Router {
    let cors = match origin {
        Some(o) => CorsLayer::new().allow_origin(o),
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/clusters", get(list_clusters))
        .route("/sessions/{id}/clusters/{index}", get(get_cluster))
        .route("/sessions/{id}/clusters/{index}/patches/{j}/thumbnail", get(get_thumbnail))
        .route("/sessions/{id}/clusters/{index}/verdict", post(post_verdict))
        .route("/sessions/{id}/finalize", post(finalize))
        .layer(cors)
        .with_state(app)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, root: &Path, origin: Option<HeaderValue>) -> std::io::Result<()> {
    let app = AppState::load(root).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, root = %root.display(), "labeling service listening");
    axum::serve(listener, router(app, origin))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
