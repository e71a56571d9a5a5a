//! HTTP routes under `/v1`.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use mspsc_core::ingest::{
    parse_calendar_events, parse_fitness_table, parse_weather_table, RowReject, SourceRecord,
};
use mspsc_core::{CheckIn, ConfigOverrides, EnvSnapshot, FactorValue, ModelError, SourceGroup};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::{Engine, EngineError, SnapshotSource};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const REPLAYED_HEADER: &str = "idempotent-replayed";

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    /// Bearer token required on every route but the health check. `None`
    /// disables authentication.
    pub token: Option<String>,
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

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": self.code, "message": self.message }));
        (self.status, body).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            EngineError::UnknownUser(_) | EngineError::Model(ModelError::UnknownUser(_)) => {
                (StatusCode::NOT_FOUND, "unknown_user")
            }
            EngineError::UserExists(_) => (StatusCode::CONFLICT, "user_exists"),
            EngineError::Model(ModelError::OutOfOrderCheckIn { .. }) => {
                (StatusCode::CONFLICT, "out_of_order_checkin")
            }
            EngineError::Model(ModelError::NoHistoryFallbackImpossible) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "no_history")
            }
            EngineError::InvalidUserId(_)
            | EngineError::UserMismatch { .. }
            | EngineError::GroupMismatch(_)
            | EngineError::InvalidConfig(_)
            | EngineError::Factor(_)
            | EngineError::Model(_) => (StatusCode::BAD_REQUEST, "invalid"),
            EngineError::Storage(_) | EngineError::Replay(_) => {
                tracing::error!(error = %e, "storage failure");
                (StatusCode::INTERNAL_SERVER_ERROR, "storage")
            }
        };
        Self::new(status, code, message)
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Runs a blocking engine call off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, EngineError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(state: AppState) -> Router {
    let protected = Router::new()
        .route("/v1/users", post(create_user))
        .route("/v1/users/{id}/checkins", post(record_checkin))
        .route("/v1/users/{id}/prediction", get(prediction))
        .route("/v1/users/{id}/weights", get(weights))
        .route("/v1/users/{id}/config", put(set_config))
        .route("/v1/users/{id}/sources/{group}", post(add_sources))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/v1/health", get(health))
        .merge(protected)
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                "missing or invalid bearer token",
            )
            .into_response();
        }
    }
    next.run(request).await
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({ "status": "ok", "users": state.engine.user_count() }))
}

#[derive(Deserialize)]
struct CreateUser {
    user_id: String,
    #[serde(default)]
    overrides: ConfigOverrides,
}

async fn create_user(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateUser = parse_json(&body)?;
    let engine = state.engine.clone();
    let view = blocking(move || engine.create_user(&req.user_id, req.overrides)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn record_checkin(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let mut value: Value = parse_json(&body)?;
    // the path names the user; the body may omit it
    if let Some(obj) = value.as_object_mut() {
        obj.entry("user_id")
            .or_insert_with(|| Value::String(user_id.clone()));
    }
    let checkin: CheckIn = serde_json::from_value(value)
        .map_err(|e| ApiError::bad_request(format!("invalid check-in: {e}")))?;
    let key = match headers.get(IDEMPOTENCY_HEADER) {
        Some(v) => Some(
            v.to_str()
                .map_err(|_| ApiError::bad_request("idempotency key must be visible ASCII"))?
                .to_string(),
        ),
        None => None,
    };
    let engine = state.engine.clone();
    let (ack, fresh) = blocking(move || engine.record_checkin(&user_id, checkin, key)).await?;
    let mut response = (StatusCode::CREATED, Json(ack)).into_response();
    if !fresh {
        response
            .headers_mut()
            .insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
    }
    Ok(response)
}

#[derive(Deserialize)]
struct PredictionQuery {
    /// `auto`, or a JSON object of factor values.
    #[serde(default)]
    snapshot: Option<String>,
    #[serde(default)]
    at: Option<DateTime<Utc>>,
}

async fn prediction(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
    Query(q): Query<PredictionQuery>,
) -> ApiResult<Response> {
    let at = q.at.unwrap_or_else(Utc::now);
    let source = match q.snapshot.as_deref() {
        None | Some("auto") => SnapshotSource::Auto(at),
        Some(text) => {
            let values: BTreeMap<String, Option<FactorValue>> = serde_json::from_str(text)
                .map_err(|e| {
                    ApiError::bad_request(format!("snapshot must be `auto` or a JSON object: {e}"))
                })?;
            SnapshotSource::Explicit(EnvSnapshot {
                captured_at: at,
                values,
            })
        }
    };
    let prediction = state.engine.predict(&user_id, source)?;
    Ok(Json(prediction).into_response())
}

async fn weights(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
) -> ApiResult<Response> {
    Ok(Json(state.engine.weights(&user_id)?).into_response())
}

async fn set_config(
    State(state): State<AppState>,
    Path(user_id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let overrides: ConfigOverrides = parse_json(&body)?;
    let engine = state.engine.clone();
    let view = blocking(move || engine.set_config(&user_id, overrides)).await?;
    Ok(Json(view).into_response())
}

#[derive(Serialize)]
struct SourcesAck {
    accepted: usize,
    rejects: Vec<RowReject>,
}

async fn add_sources(
    State(state): State<AppState>,
    Path((user_id, group)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let group: SourceGroup = group.parse().map_err(|_| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_group",
            format!("unknown source group `{group}`"),
        )
    })?;
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/json")
        .split(';')
        .next()
        .unwrap_or_default()
        .trim()
        .to_ascii_lowercase();
    let ingest = |e: mspsc_core::IngestError| ApiError::bad_request(e.to_string());
    let (records, rejects): (Vec<SourceRecord>, Vec<RowReject>) =
        match (content_type.as_str(), group) {
            ("application/json", _) => (parse_json(&body)?, Vec::new()),
            ("text/csv", SourceGroup::Weather) => {
                let t = parse_weather_table(&body).map_err(ingest)?;
                (t.records, t.rejects)
            }
            ("text/csv", SourceGroup::Fitness) => {
                let t = parse_fitness_table(&body).map_err(ingest)?;
                (t.records, t.rejects)
            }
            ("text/calendar", SourceGroup::Calendar) => {
                (parse_calendar_events(&body).map_err(ingest)?, Vec::new())
            }
            (other, _) => {
                return Err(ApiError::new(
                    StatusCode::UNSUPPORTED_MEDIA_TYPE,
                    "unsupported_media_type",
                    format!("cannot read `{other}` for the {group} group"),
                ))
            }
        };
    let engine = state.engine.clone();
    let accepted = blocking(move || engine.add_sources(&user_id, group, records)).await?;
    Ok((StatusCode::CREATED, Json(SourcesAck { accepted, rejects })).into_response())
}
