//! Local inference service.
//!
//! Routes:
//! - `GET /health`
//! - `POST /api/v1/predict` ranks related changes for a live Gerrit change
//! - `POST /api/v1/score` scores two inline change records

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use patchlink_core::classifier::{load_model, ClassifierError};
use patchlink_core::embedding::EmbeddingError;
use patchlink_core::features::FeatureVector;
use patchlink_core::model::{ChangeRecord, WindowMode, DEFAULT_WINDOW_DAYS, MAX_WINDOW_DAYS};
use patchlink_core::pipeline::{score_pair, PipelineError, DEFAULT_TOP_K};
use patchlink_core::{
    rank_candidates, EmbeddingCache, EmbeddingProvider, FallbackEmbedder, ForestModel, HttpEmbedder, ProjectScope,
    RankRequest, WindowConfig,
};
use patchlink_gerrit::{GerritClient, GerritConfig, GerritError};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8787";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot load model {}", path.display())]
    Model { path: PathBuf, source: ClassifierError },
    #[error("embedding provider unavailable")]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Gerrit(#[from] GerritError),
    #[error("invalid allowed origin {0:?}")]
    BadOrigin(String),
    #[error("cannot bind {addr}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server error")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen_address: SocketAddr,
    pub model_path: PathBuf,
    pub gerrit: GerritConfig,
    /// Base URL of an `/embed` server; the built-in hashing embedder is used when unset.
    pub embed_url: Option<String>,
    pub embed_timeout: Duration,
    pub allowed_origins: Vec<String>,
    pub default_window_days: u32,
    pub default_top_k: usize,
}

impl ServiceConfig {
    pub fn new(model_path: impl Into<PathBuf>, gerrit: GerritConfig) -> Self {
        Self {
            listen_address: DEFAULT_LISTEN.parse().expect("valid default address"),
            model_path: model_path.into(),
            gerrit,
            embed_url: None,
            embed_timeout: Duration::from_secs(30),
            allowed_origins: Vec::new(),
            default_window_days: DEFAULT_WINDOW_DAYS,
            default_top_k: DEFAULT_TOP_K,
        }
    }
}

/// Shared, read-only state behind every handler.
#[derive(Clone)]
pub struct AppState {
    pub model: Arc<ForestModel>,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub cache: Arc<EmbeddingCache>,
    pub gerrit: GerritClient,
    pub default_window_days: u32,
    pub default_top_k: usize,
}

impl AppState {
    pub fn new(model: ForestModel, provider: Arc<dyn EmbeddingProvider>, gerrit: GerritClient) -> Self {
        Self {
            model: Arc::new(model),
            provider,
            cache: Arc::new(EmbeddingCache::new()),
            gerrit,
            default_window_days: DEFAULT_WINDOW_DAYS,
            default_top_k: DEFAULT_TOP_K,
        }
    }

    /// Loads the model and connects the embedding provider. Blocking; call
    /// it before entering the async runtime.
    pub fn load(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let model = load_model(&config.model_path).map_err(|source| ServiceError::Model {
            path: config.model_path.clone(),
            source,
        })?;
        let provider: Arc<dyn EmbeddingProvider> = match &config.embed_url {
            Some(url) => Arc::new(HttpEmbedder::connect(url, config.embed_timeout)?),
            None => Arc::new(FallbackEmbedder::default()),
        };
        let gerrit = GerritClient::new(config.gerrit.clone())?;
        let mut state = Self::new(model, provider, gerrit);
        state.default_window_days = config.default_window_days;
        state.default_top_k = config.default_top_k;
        Ok(state)
    }
}

/// Builds the router. With no allowed origins, no CORS headers are ever sent.
pub fn router(state: AppState, allowed_origins: &[String]) -> Result<Router, ServiceError> {
    let app = Router::new()
        .route("/health", get(health))
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/score", post(score))
        .with_state(state);
    if allowed_origins.is_empty() {
        return Ok(app);
    }
    let origins = allowed_origins
        .iter()
        .map(|o| HeaderValue::from_str(o.trim_end_matches('/')).map_err(|_| ServiceError::BadOrigin(o.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Ok(app.layer(cors))
}

/// Binds the configured address and serves until `shutdown` resolves.
pub async fn serve(
    config: &ServiceConfig,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let app = router(state, &config.allowed_origins)?;
    let listener = tokio::net::TcpListener::bind(config.listen_address)
        .await
        .map_err(|source| ServiceError::Bind { addr: config.listen_address, source })?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

impl From<GerritError> for ApiError {
    fn from(e: GerritError) -> Self {
        match e {
            GerritError::NotFound(_) => ApiError(StatusCode::NOT_FOUND, e.to_string()),
            other => ApiError(StatusCode::BAD_GATEWAY, format!("gerrit: {other}")),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Embedding { .. } => ApiError(StatusCode::BAD_GATEWAY, e.to_string()),
            PipelineError::InvalidTopK => bad_request(e.to_string()),
            PipelineError::Classifier(_) => ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("scoring task failed: {e}"))
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Health {
    pub status: &'static str,
    pub model_version: String,
    pub n_trees: usize,
    pub provider_name: String,
}

async fn health(State(st): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok",
        model_version: st.model.version.clone(),
        n_trees: st.model.n_trees,
        provider_name: st.provider.name().to_owned(),
    })
}

#[derive(Debug, Deserialize)]
pub struct PredictRequest {
    pub change_id: String,
    #[serde(default)]
    pub project: Option<String>,
    #[serde(default)]
    pub window_days: Option<u32>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub window_mode: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct PredictionOut {
    pub rank: usize,
    pub change_key: String,
    pub subject: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub score: f64,
    pub confidence_pct: u32,
    pub features: FeatureVector,
}

#[derive(Debug, Serialize)]
pub struct PredictResponse {
    pub target: ChangeRecord,
    pub predictions: Vec<PredictionOut>,
    pub window_days: u32,
    pub window_mode: WindowMode,
    pub top_k: usize,
    pub n_candidates: usize,
    pub timing_ms: u64,
}

pub fn confidence_pct(score: f64) -> u32 {
    (100.0 * score.clamp(0.0, 1.0)).round() as u32
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("invalid request body: {e}")))
}

async fn predict(State(st): State<AppState>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let started = Instant::now();
    let req: PredictRequest = parse_json(&body)?;
    let change_id = req.change_id.trim();
    if change_id.is_empty() {
        return Err(bad_request("change_id must not be empty"));
    }
    let window_days = req.window_days.unwrap_or(st.default_window_days);
    if !(1..=MAX_WINDOW_DAYS).contains(&window_days) {
        return Err(bad_request(format!("window_days must be in 1..={MAX_WINDOW_DAYS}")));
    }
    let top_k = req.top_k.unwrap_or(st.default_top_k);
    if top_k < 1 {
        return Err(bad_request("top_k must be at least 1"));
    }
    let mode = match req.window_mode.as_deref() {
        None => WindowMode::Lookback,
        Some(m) => m.parse::<WindowMode>().map_err(bad_request)?,
    };
    let window = WindowConfig::new(window_days, mode).map_err(|e| bad_request(e.to_string()))?;

    let target = st.gerrit.get_change(change_id).await?;
    if let Some(p) = req.project.as_deref().filter(|p| !p.is_empty()) {
        if p != target.project {
            return Err(ApiError(
                StatusCode::NOT_FOUND,
                format!("change {change_id} not found in project {p}"),
            ));
        }
    }
    let (lo, hi) = window.bounds(target.timestamp());
    let after = DateTime::<Utc>::from_timestamp(lo, 0).unwrap_or(DateTime::<Utc>::MIN_UTC);
    // Gerrit filters on update time, so keep anything updated up to now and
    // let the ranker apply the creation-time window.
    let before = DateTime::<Utc>::from_timestamp(hi, 0).unwrap_or(DateTime::<Utc>::MAX_UTC).max(Utc::now());
    let pool = st
        .gerrit
        .query_changes(&target.project, after, before, st.gerrit.config().query_cap)
        .await?;
    let n_pool = pool.len();

    let request = RankRequest {
        target: target.clone(),
        pool,
        window,
        top_k,
        scope: ProjectScope::SameProject,
    };
    let ranked = tokio::task::spawn_blocking(move || {
        rank_candidates(&request, &st.model, st.provider.as_ref(), &st.cache)
    })
    .await
    .map_err(join_error)??;

    let predictions = ranked
        .into_iter()
        .map(|p| PredictionOut {
            rank: p.rank,
            confidence_pct: confidence_pct(p.score),
            change_key: p.change_key,
            subject: p.subject,
            url: p.url,
            score: p.score,
            features: p.features,
        })
        .collect();
    let timing_ms = started.elapsed().as_millis() as u64;
    tracing::info!(change = %target.change_key, pool = n_pool, timing_ms, "predict");
    Ok(Json(PredictResponse {
        target,
        predictions,
        window_days,
        window_mode: mode,
        top_k,
        n_candidates: n_pool,
        timing_ms,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRequest {
    a: ChangeRecord,
    b: ChangeRecord,
}

#[derive(Debug, Serialize)]
pub struct ScoreResponse {
    pub score: f64,
    pub confidence_pct: u32,
    pub features: FeatureVector,
}

async fn score(State(st): State<AppState>, body: Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    let req: ScoreRequest = parse_json(&body)?;
    let (score, features) =
        tokio::task::spawn_blocking(move || score_pair(&req.a, &req.b, &st.model, st.provider.as_ref(), &st.cache))
            .await
            .map_err(join_error)??;
    Ok(Json(ScoreResponse {
        score,
        confidence_pct: confidence_pct(score),
        features,
    }))
}
