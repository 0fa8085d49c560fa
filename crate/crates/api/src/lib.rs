//! HTTP JSON API over a loaded, immutable dataset.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/api/meta` | grid and dataset stats |
//! | GET | `/api/overview` | scatter points |
//! | POST | `/api/selection/configs` | `{"agent_keys": [...]}` → config distribution |
//! | POST | `/api/selection/scenarios` | `{"agent_keys": [...]}` → scenario summaries |
//! | GET | `/api/scenarios/{id}/interaction` | heatmaps, timeline, markers |
//!
//! Bodies are canonical JSON. Errors are `{"code", "message", "offenders"?}`.

mod dataset;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/api.md")]
mod book {}

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use marlviz_core::analytics::{self, AnalyticsError};
use marlviz_core::canonical::to_canonical_json;
use marlviz_core::env::ScenarioConfig;
use marlviz_core::projection::ProjectedPoint;
use marlviz_core::trace::AgentKey;
use marlviz_core::training::TrainSpec;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

pub use dataset::{LoadError, LoadedDataset};

pub const DEFAULT_PORT: u16 = 8787;

/// `None` until a dataset is loaded; every data endpoint answers 503 then.
pub type AppState = Option<Arc<LoadedDataset>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRequest {
    pub agent_keys: Vec<AgentKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offenders: Option<Vec<AgentKey>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub scenarios: usize,
    pub agents: usize,
    pub total_steps: usize,
    pub train_spec: TrainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub grid: Vec<ScenarioConfig>,
    pub stats: DatasetStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverviewResponse {
    pub points: Vec<ProjectedPoint>,
    pub explained_variance_ratio: f64,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into(), offenders: None } }
    }

    fn not_loaded() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "not_loaded", "dataset is not loaded")
    }
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        let message = e.to_string();
        let (status, code, offenders) = match e {
            AnalyticsError::UnknownAgent(keys) => (StatusCode::BAD_REQUEST, "unknown_agent", Some(keys)),
            AnalyticsError::DuplicateAgent(keys) => (StatusCode::BAD_REQUEST, "duplicate_agent", Some(keys)),
            AnalyticsError::InvalidScenario { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "invalid_scenario", None),
        };
        ApiError { status, body: ErrorBody { code: code.into(), message, offenders } }
    }
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match to_canonical_json(value) {
        Ok(body) => (status, [(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &self.body)
    }
}

type ApiResult = Result<Response, ApiError>;

fn loaded(state: &AppState) -> Result<&LoadedDataset, ApiError> {
    state.as_deref().ok_or_else(ApiError::not_loaded)
}

fn parse_selection(body: &Bytes) -> Result<SelectionRequest, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed_request", e.to_string()))
}

async fn meta(State(state): State<AppState>) -> ApiResult {
    let d = loaded(&state)?;
    let stats = DatasetStats {
        scenarios: d.traces.len(),
        agents: d.agent_count(),
        total_steps: d.traces.values().map(|t| t.steps.len()).sum(),
        train_spec: d.train_spec.clone(),
    };
    Ok(json_response(StatusCode::OK, &MetaResponse { grid: d.grid(), stats }))
}

async fn overview(State(state): State<AppState>) -> ApiResult {
    let d = loaded(&state)?;
    let body = OverviewResponse {
        points: d.projection.points.clone(),
        explained_variance_ratio: d.projection.explained_variance_ratio,
    };
    Ok(json_response(StatusCode::OK, &body))
}

async fn selection_configs(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let d = loaded(&state)?;
    let req = parse_selection(&body)?;
    Ok(json_response(StatusCode::OK, &analytics::config_distribution(&req.agent_keys, &d.traces)?))
}

async fn selection_scenarios(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let d = loaded(&state)?;
    let req = parse_selection(&body)?;
    Ok(json_response(StatusCode::OK, &analytics::selection_scenarios(&req.agent_keys, &d.traces)?))
}

async fn interaction(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let d = loaded(&state)?;
    let trace = d
        .traces
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_scenario", format!("unknown scenario {id}")))?;
    Ok(json_response(StatusCode::OK, &analytics::interaction_detail(trace)?))
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(origin) = origin.to_str() else { return false };
    let Some(rest) = origin.strip_prefix("http://").or_else(|| origin.strip_prefix("https://")) else {
        return false;
    };
    let host = match rest.strip_prefix('[') {
        Some(v6) => v6.split(']').next().unwrap_or_default(),
        None => rest.split(':').next().unwrap_or_default(),
    };
    matches!(host, "localhost" | "127.0.0.1" | "::1")
}

pub fn cors() -> CorsLayer {
    CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin, _| is_local_origin(origin)))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

/// The API under `/api`, plus static files from `ui_dir` at `/`.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/meta", get(meta))
        .route("/overview", get(overview))
        .route("/selection/configs", post(selection_configs))
        .route("/selection/scenarios", post(selection_scenarios))
        .route("/scenarios/{scenario_id}/interaction", get(interaction))
        .fallback(api_not_found)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    let app = match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.layer(cors())
}

/// Binds and serves until the process is stopped. The dataset must already be
/// loaded so no request ever observes a partial load.
pub async fn serve(addr: SocketAddr, dataset: LoadedDataset, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let app = router(Some(Arc::new(dataset)), ui_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await
}
