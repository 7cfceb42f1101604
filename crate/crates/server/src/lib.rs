//! JSON HTTP API over a [`Workspace`]. Every route delegates to one
//! workflow or evaluation call; the blocking work runs on tokio's blocking
//! pool so generation for one project never stalls another.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use benchforge_core::evaluation::{self, EvalError, SqliteDb};
use benchforge_core::sql::SchemaFormat;
use benchforge_core::workflow::{
    export_json, Feedback, IngestOptions, ItemState, ProjectConfig, WorkflowError, Workspace,
};
use benchforge_core::Dialect;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";
pub const TOKEN_ENV: &str = "BENCHFORGE_TOKEN";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub port: u16,
    pub host: [u8; 4],
    pub token: String,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
    /// Fixture database used by `evaluate` when the request names none.
    pub eval_db: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(port: u16, token: impl Into<String>) -> Self {
        ServerConfig {
            port,
            host: [127, 0, 0, 1],
            token: token.into(),
            cors_origins: Vec::new(),
            eval_db: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {message}")]
    Bind { addr: SocketAddr, message: String },
    #[error("bearer token must be non-empty")]
    MissingToken,
    #[error("server failed: {0}")]
    Io(String),
}

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    token: Arc<str>,
    eval_db: Option<PathBuf>,
}

impl AppState {
    pub fn new(workspace: Arc<Workspace>, token: &str, eval_db: Option<PathBuf>) -> Self {
        AppState {
            workspace,
            token: token.into(),
            eval_db,
        }
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
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidInput", message)
    }
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "ProjectNotFound" | "ItemNotFound" | "NoReport" | "QueueEmpty" => StatusCode::NOT_FOUND,
        "DuplicateName" | "LeaseMismatch" | "InvalidTransition" | "NothingAccepted" | "NoAcceptedItems"
        | "MissingSchema" => StatusCode::CONFLICT,
        "NotImplemented" => StatusCode::NOT_IMPLEMENTED,
        "BackendError" | "EmptyCompletion" => StatusCode::BAD_GATEWAY,
        "StorageError" | "IoError" | "FixtureError" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        let code = e.code();
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        let code = e.code();
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))
}

/// Parses an optional body; an empty body means `T::default()`.
fn parse_or_default<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse(body)
    }
}

fn annotator(headers: &HeaderMap, body_value: Option<String>) -> ApiResult<String> {
    let from_header = headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    body_value
        .or(from_header)
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
        .ok_or_else(|| ApiError::bad_request(format!("annotator_id (body or {ANNOTATOR_HEADER} header) is required")))
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if matches!(*req.method(), Method::GET | Method::HEAD | Method::OPTIONS) {
        return next.run(req).await;
    }
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    if presented == Some(&*state.token) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token").into_response()
    }
}

#[derive(Deserialize)]
struct CreateProject {
    name: String,
    #[serde(default)]
    dialect: Dialect,
    #[serde(default)]
    config: ProjectConfig,
}

#[derive(Deserialize)]
struct SchemaUpload {
    content: String,
    #[serde(default)]
    format: Option<SchemaFormat>,
    #[serde(default)]
    schema_id: Option<String>,
}

#[derive(Deserialize)]
struct QueryUpload {
    content: String,
    #[serde(default)]
    options: Option<IngestOptions>,
    #[serde(default)]
    source_tag: Option<String>,
    #[serde(default)]
    import_accepted: Option<bool>,
}

#[derive(Deserialize, Default)]
struct AnnotatorBody {
    #[serde(default)]
    annotator_id: Option<String>,
}

#[derive(Deserialize)]
struct FeedbackBody {
    #[serde(default)]
    annotator_id: Option<String>,
    #[serde(flatten)]
    feedback: Feedback,
}

#[derive(Deserialize)]
struct AcceptBody {
    #[serde(default)]
    annotator_id: Option<String>,
    candidate_id: String,
    #[serde(default)]
    final_text: Option<String>,
}

#[derive(Deserialize, Default)]
struct EvaluateBody {
    #[serde(default)]
    db: Option<PathBuf>,
}

#[derive(Deserialize)]
struct OverrideBody {
    item_id: String,
    level: u8,
    #[serde(default)]
    annotator_id: Option<String>,
    #[serde(default)]
    note: String,
}

#[derive(Deserialize)]
struct ItemFilter {
    #[serde(default)]
    state: Option<String>,
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn list_projects(State(s): State<AppState>) -> ApiResult<Response> {
    blocking(move || Ok(Json(s.workspace.list_projects()?).into_response())).await
}

async fn create_project(State(s): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateProject = parse(&body)?;
    blocking(move || {
        let p = s.workspace.create_project(&req.name, req.dialect, req.config)?;
        Ok((StatusCode::CREATED, Json(p)).into_response())
    })
    .await
}

async fn get_project(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || Ok(Json(s.workspace.project(&id)?).into_response())).await
}

async fn configure(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let cfg: ProjectConfig = parse(&body)?;
    blocking(move || Ok(Json(s.workspace.configure(&id, cfg)?).into_response())).await
}

async fn ingest_schema(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: SchemaUpload = parse(&body)?;
    blocking(move || {
        let cat = s
            .workspace
            .ingest_schema(&id, req.content.as_bytes(), req.format, req.schema_id.as_deref())?;
        Ok(Json(cat).into_response())
    })
    .await
}

async fn ingest_queries(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: QueryUpload = parse(&body)?;
    let mut opts = req.options.unwrap_or_default();
    if let Some(tag) = req.source_tag {
        opts.source_tag = tag;
    }
    if let Some(flag) = req.import_accepted {
        opts.import_accepted = flag;
    }
    blocking(move || Ok(Json(s.workspace.ingest_queries(&id, &req.content, &opts)?).into_response())).await
}

async fn next_item(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: AnnotatorBody = parse_or_default(&body)?;
    let who = annotator(&headers, req.annotator_id)?;
    blocking(move || {
        let item = s.workspace.annotate_next(&id, &who)?;
        Ok(Json(s.workspace.item_view(&item.item_id)?).into_response())
    })
    .await
}

async fn list_items(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(filter): Query<ItemFilter>,
) -> ApiResult<Response> {
    let state = filter
        .state
        .map(|v| v.parse::<ItemState>())
        .transpose()
        .map_err(ApiError::bad_request)?;
    blocking(move || Ok(Json(s.workspace.items(&id, state)?).into_response())).await
}

async fn get_item(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || Ok(Json(s.workspace.item_view(&id)?).into_response())).await
}

async fn item_events(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || Ok(Json(s.workspace.item_events(&id)?).into_response())).await
}

async fn feedback(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: FeedbackBody = parse(&body)?;
    let who = annotator(&headers, req.annotator_id)?;
    blocking(move || Ok(Json(s.workspace.submit_feedback(&id, &who, req.feedback)?).into_response())).await
}

async fn accept(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: AcceptBody = parse(&body)?;
    let who = annotator(&headers, req.annotator_id)?;
    blocking(move || {
        let item = s
            .workspace
            .accept(&id, &who, &req.candidate_id, req.final_text.as_deref())?;
        Ok(Json(item).into_response())
    })
    .await
}

async fn release(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: AnnotatorBody = parse_or_default(&body)?;
    let who = annotator(&headers, req.annotator_id)?;
    blocking(move || Ok(Json(s.workspace.release(&id, &who)?).into_response())).await
}

/// The body is the benchmark file itself, byte for byte.
async fn export(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let text = export_json(&s.workspace.export(&id)?);
        Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], text).into_response())
    })
    .await
}

async fn evaluate(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: EvaluateBody = parse_or_default(&body)?;
    let dir = req
        .db
        .or_else(|| s.eval_db.clone())
        .ok_or_else(|| ApiError::bad_request("no fixture database configured; pass `db`"))?;
    blocking(move || {
        let db = SqliteDb::load_fixture(&dir)?;
        Ok(Json(evaluation::evaluate_project(&s.workspace, &id, &db)?).into_response())
    })
    .await
}

async fn get_evaluation(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || Ok(Json(evaluation::load_report(&s.workspace, &id)?).into_response())).await
}

async fn override_level(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let req: OverrideBody = parse(&body)?;
    let who = annotator(&headers, req.annotator_id)?;
    blocking(move || {
        let r = evaluation::override_rubric(&s.workspace, &id, &req.item_id, req.level, &who, &req.note)?;
        Ok(Json(r).into_response())
    })
    .await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route")
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([
            header::AUTHORIZATION,
            header::CONTENT_TYPE,
            header::HeaderName::from_static(ANNOTATOR_HEADER),
        ]);
    let parsed: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    if parsed.is_empty() {
        layer.allow_origin(Any)
    } else {
        layer.allow_origin(AllowOrigin::list(parsed))
    }
}

pub fn router(state: AppState, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/projects", get(list_projects).post(create_project))
        .route("/api/projects/{id}", get(get_project))
        .route("/api/projects/{id}/config", post(configure))
        .route("/api/projects/{id}/schema", post(ingest_schema))
        .route("/api/projects/{id}/queries", post(ingest_queries))
        .route("/api/projects/{id}/next", post(next_item))
        .route("/api/projects/{id}/items", get(list_items))
        .route("/api/projects/{id}/export", post(export))
        .route("/api/projects/{id}/evaluate", post(evaluate))
        .route("/api/projects/{id}/evaluation", get(get_evaluation))
        .route("/api/projects/{id}/evaluation/overrides", post(override_level))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/events", get(item_events))
        .route("/api/items/{id}/feedback", post(feedback))
        .route("/api/items/{id}/accept", post(accept))
        .route("/api/items/{id}/release", post(release))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(cors(cors_origins))
        .with_state(state)
}

/// Binds the configured port and serves until the process ends.
pub async fn serve(config: ServerConfig, workspace: Arc<Workspace>) -> Result<(), ServerError> {
    if config.token.trim().is_empty() {
        return Err(ServerError::MissingToken);
    }
    let addr = SocketAddr::from((config.host, config.port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| ServerError::Bind {
            addr,
            message: e.to_string(),
        })?;
    log::info!("listening on http://{addr}");
    let state = AppState::new(workspace, &config.token, config.eval_db.clone());
    axum::serve(listener, router(state, &config.cors_origins))
        .await
        .map_err(|e| ServerError::Io(e.to_string()))
}
