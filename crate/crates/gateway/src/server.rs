//! HTTP routes over an [`Engine`]. Pipeline work is blocking (MLLM calls,
//! sampling), so every call into the engine runs on the blocking pool under
//! the configured round timeout.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::multipart::{MultipartError, MultipartRejection};
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prefalign_core::pipeline::{serialize_session, GenerationConfig};
use prefalign_core::{AppConfig, Engine, PipelineError, SessionEdit, SessionState};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use crate::error::ApiError;
use crate::store::{ImageStore, PutOutcome, SessionStore};

#[derive(Clone)]
pub struct AppState {
    pub engine: Engine,
    pub sessions: Arc<SessionStore>,
    pub images: Arc<ImageStore>,
    /// Generation defaults for new sessions.
    pub defaults: GenerationConfig,
    pub round_timeout: Duration,
    pub max_upload_bytes: usize,
    pub cors_origin: Option<String>,
}

impl AppState {
    pub fn in_memory(engine: Engine, cfg: &AppConfig) -> Self {
        Self {
            engine,
            sessions: Arc::new(SessionStore::in_memory()),
            images: Arc::new(ImageStore::in_memory()),
            defaults: cfg.generation(),
            round_timeout: Duration::from_secs(cfg.service.round_timeout_secs),
            max_upload_bytes: cfg.service.max_upload_bytes,
            cors_origin: cfg.service.cors_origin.clone(),
        }
    }

    /// Sessions under `<data_dir>/sessions`, images under `<data_dir>/images`.
    pub fn on_disk(engine: Engine, cfg: &AppConfig) -> std::io::Result<Self> {
        let dir = &cfg.service.data_dir;
        Ok(Self {
            sessions: Arc::new(SessionStore::open(dir.join("sessions"))?),
            images: Arc::new(ImageStore::open(dir.join("images"))?),
            ..Self::in_memory(engine, cfg)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundCreated {
    pub round_index: usize,
    pub image_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub mllm: String,
    pub mllm_provider: String,
    pub backend: String,
    pub backend_name: String,
    pub sessions: usize,
}

pub fn router(state: AppState) -> Router {
    let cors = match state.cors_origin.as_deref().map(HeaderValue::from_str) {
        Some(Ok(origin)) => CorsLayer::new().allow_origin(origin),
        _ => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any)
    .expose_headers([header::LOCATION, header::ETAG]);
    // multipart framing adds a little on top of the image itself
    let body_limit = state.max_upload_bytes + 64 * 1024;
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).patch(edit_session))
        .route("/sessions/{id}/rounds", post(run_round))
        .route("/images/{digest}", get(get_image))
        .route("/healthz", get(healthz))
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
        })
        .layer(DefaultBodyLimit::max(body_limit))
        .layer(cors)
        .with_state(state)
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    F: FnOnce(Engine) -> Result<T, PipelineError> + Send + 'static,
    T: Send + 'static,
{
    let engine = state.engine.clone();
    let task = tokio::task::spawn_blocking(move || f(engine));
    match tokio::time::timeout(state.round_timeout, task).await {
        Err(_) => Err(ApiError::timeout(state.round_timeout.as_secs())),
        Ok(Err(join)) => Err(ApiError::internal(format!("worker failed: {join}"))),
        Ok(Ok(result)) => result.map_err(ApiError::from),
    }
}

fn session_response(status: StatusCode, state: &SessionState) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    headers.insert(header::ETAG, HeaderValue::from_str(&format!("\"{}\"", state.revision)).unwrap());
    if status == StatusCode::CREATED {
        headers.insert(header::LOCATION, HeaderValue::from_str(&format!("/sessions/{}", state.id)).unwrap());
    }
    (status, headers, serialize_session(state)).into_response()
}

fn io_error(e: std::io::Error) -> ApiError {
    ApiError::internal(format!("store: {e}"))
}

fn load(state: &AppState, id: &str) -> Result<SessionState, ApiError> {
    state.sessions.get(id).ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
}

fn store_next(state: &AppState, expected: u64, next: SessionState) -> Result<(), ApiError> {
    match state.sessions.compare_and_swap(expected, next).map_err(io_error)? {
        PutOutcome::Stored => Ok(()),
        PutOutcome::Conflict(now) => Err(ApiError::conflict(format!(
            "session changed while the request ran (revision {expected} -> {now})"
        ))),
        PutOutcome::Missing => Err(ApiError::not_found("session vanished")),
    }
}

async fn create_session(
    State(state): State<AppState>,
    form: Result<Multipart, MultipartRejection>,
) -> Result<Response, ApiError> {
    let mut form = form.map_err(|e| rejection(e.status(), e.body_text()))?;
    let mut reference: Option<Bytes> = None;
    let mut base_prompt: Option<String> = None;
    let mut config = state.defaults.clone();
    while let Some(field) = form.next_field().await.map_err(multipart_error)? {
        match field.name().unwrap_or_default() {
            "reference" => reference = Some(field.bytes().await.map_err(multipart_error)?),
            "base_prompt" => base_prompt = Some(field.text().await.map_err(multipart_error)?),
            // optional JSON overrides of the generation settings
            "config" => {
                let text = field.text().await.map_err(multipart_error)?;
                config = serde_json::from_str(&text)
                    .map_err(|e| ApiError::bad_request(format!("config field: {e}")))?;
            }
            other => log::debug!("ignoring multipart field `{other}`"),
        }
    }
    let reference = reference.ok_or_else(|| ApiError::bad_request("missing `reference` field"))?;
    let base_prompt = base_prompt.ok_or_else(|| ApiError::bad_request("missing `base_prompt` field"))?;
    if reference.len() > state.max_upload_bytes {
        return Err(ApiError::too_large(format!(
            "reference is {} bytes, limit is {}",
            reference.len(),
            state.max_upload_bytes
        )));
    }
    let id = uuid::Uuid::new_v4().to_string();
    let session = blocking(&state, move |engine| engine.create_session(&id, &reference, &base_prompt, config)).await?;
    if !state.sessions.insert(session.clone()).map_err(io_error)? {
        return Err(ApiError::internal("session id collision"));
    }
    log::info!("created session {}", session.id);
    Ok(session_response(StatusCode::CREATED, &session))
}

fn multipart_error(e: MultipartError) -> ApiError {
    rejection(e.status(), e.body_text())
}

/// Extractor failures, reshaped into the common error body.
fn rejection(status: StatusCode, text: String) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::too_large(text)
    } else {
        ApiError::bad_request(text)
    }
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(session_response(StatusCode::OK, &load(&state, &id)?))
}

/// `If-Match` carries the revision the client last saw, quoted or bare.
fn if_match(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    let Some(v) = headers.get(header::IF_MATCH) else { return Ok(None) };
    let text = v.to_str().map_err(|_| ApiError::bad_request("If-Match is not ASCII"))?;
    let text = text.trim().trim_start_matches("W/").trim_matches('"');
    text.parse().map(Some).map_err(|_| ApiError::bad_request(format!("If-Match `{text}` is not a revision")))
}

async fn edit_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, ApiError> {
    let body = body.map_err(|e| rejection(e.status(), e.body_text()))?;
    let edits: Vec<SessionEdit> =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("edit list: {e}")))?;
    let current = load(&state, &id)?;
    if let Some(seen) = if_match(&headers)? {
        if seen != current.revision {
            return Err(ApiError::conflict(format!("revision is {}, not {seen}", current.revision)));
        }
    }
    let expected = current.revision;
    let next = blocking(&state, move |engine| engine.apply_edits(&current, &edits)).await?;
    store_next(&state, expected, next.clone())?;
    Ok(session_response(StatusCode::OK, &next))
}

async fn run_round(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let current = load(&state, &id)?;
    if let Some(seen) = if_match(&headers)? {
        if seen != current.revision {
            return Err(ApiError::conflict(format!("revision is {}, not {seen}", current.revision)));
        }
    }
    let expected = current.revision;
    let (next, png) = blocking(&state, move |engine| engine.run_round(&current)).await?;
    let digest = state.images.put(png).map_err(io_error)?;
    let round_index = next.rounds.len() - 1;
    store_next(&state, expected, next)?;
    let body = RoundCreated { round_index, image_url: format!("/images/{digest}") };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_image(State(state): State<AppState>, Path(digest): Path<String>) -> Result<Response, ApiError> {
    let digest = digest.strip_suffix(".png").unwrap_or(&digest);
    let png = state.images.get(digest).ok_or_else(|| ApiError::not_found(format!("no image `{digest}`")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    let chat = state.engine.chat.clone();
    let reachable = tokio::task::spawn_blocking(move || chat.probe()).await.unwrap_or(false);
    let backend = &state.engine.backend;
    let backend_ok = backend.capabilities().embed_dim == state.engine.encoder.shape().1;
    Json(Health {
        status: "ok".into(),
        mllm: if reachable { "reachable" } else { "unreachable" }.into(),
        mllm_provider: state.engine.chat.name().into(),
        backend: if backend_ok { "ok" } else { "misconfigured" }.into(),
        backend_name: backend.name().into(),
        sessions: state.sessions.len(),
    })
}
