//! HTTP binding of the Administration Shells.
//!
//! The central shell lists registered twins; each twin shell exposes status,
//! time series and command tickets for one platform. Both speak JSON under
//! `/api/v1`. Errors are `{"error": "..."}` with 400 for malformed input and
//! 404 for unknown topics, tickets or twins.

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dtp_core::adminshell::{inject_event, CentralRegistry, OperatorQueue, ShellError, SimClock, TwinRegistration, TwinShell};
use dtp_core::scenarios::appmsg::Command;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const DEFAULT_TIMESERIES_LIMIT: usize = 1000;

pub struct ApiError(StatusCode, String);

impl From<ShellError> for ApiError {
    fn from(e: ShellError) -> Self {
        let status = match e {
            ShellError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ShellError::UnknownTopic(_) | ShellError::UnknownTicket(_) | ShellError::UnknownTwin(_) => StatusCode::NOT_FOUND,
            ShellError::Shadow(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterRequest {
    pub twin_id: String,
    pub display_name: String,
    pub base_url: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EventRequest {
    pub event_code: u8,
    pub new_sampling_interval_s: u16,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub struct TimeseriesQuery {
    pub from_ns: Option<i64>,
    pub to_ns: Option<i64>,
    pub limit: Option<usize>,
}

/// State behind the central shell.
#[derive(Clone)]
pub struct CentralShell {
    pub registry: CentralRegistry,
    pub clock: SimClock,
    pub operator: OperatorQueue,
}

async fn register(
    State(central): State<CentralShell>,
    body: Result<Json<RegisterRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<TwinRegistration>)> {
    let Json(req) = body?;
    let registration =
        TwinRegistration { twin_id: req.twin_id, display_name: req.display_name, base_url: req.base_url, registered_at_ns: 0 };
    let pos = central.registry.register(registration, central.clock.now_ns())?;
    Ok((StatusCode::CREATED, Json(central.registry.list()[pos].clone())))
}

async fn list_twins(State(central): State<CentralShell>) -> Json<Vec<TwinRegistration>> {
    Json(central.registry.list())
}

async fn central_event(
    State(central): State<CentralShell>,
    body: Result<Json<EventRequest>, JsonRejection>,
) -> ApiResult<StatusCode> {
    let Json(req) = body?;
    inject_event(&central.operator, req.event_code, req.new_sampling_interval_s)?;
    Ok(StatusCode::ACCEPTED)
}

pub fn central_router(central: CentralShell) -> Router {
    Router::new()
        .route("/api/v1/register", post(register))
        .route("/api/v1/twins", get(list_twins))
        .route("/api/v1/event", post(central_event))
        .with_state(central)
}

async fn status(State(shell): State<TwinShell>) -> ApiResult<Response> {
    Ok(Json(shell.get_status()?).into_response())
}

async fn timeseries(
    State(shell): State<TwinShell>,
    Path(topic): Path<String>,
    query: Result<Query<TimeseriesQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let points = shell.query_timeseries(
        &topic,
        q.from_ns.unwrap_or(i64::MIN),
        q.to_ns.unwrap_or(i64::MAX),
        q.limit.unwrap_or(DEFAULT_TIMESERIES_LIMIT),
    )?;
    Ok(Json(points).into_response())
}

async fn submit_command(
    State(shell): State<TwinShell>,
    body: Result<Json<Command>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(command) = body?;
    let ticket = shell.submit_command(command)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "ticket_id": ticket.ticket_id }))))
}

async fn poll_command(State(shell): State<TwinShell>, Path(ticket_id): Path<String>) -> ApiResult<Response> {
    Ok(Json(shell.poll_command(&ticket_id)?).into_response())
}

async fn twin_event(State(shell): State<TwinShell>, body: Result<Json<EventRequest>, JsonRejection>) -> ApiResult<StatusCode> {
    let Json(req) = body?;
    shell.inject_event(req.event_code, req.new_sampling_interval_s)?;
    Ok(StatusCode::ACCEPTED)
}

pub fn twin_router(shell: TwinShell) -> Router {
    Router::new()
        .route("/api/v1/status", get(status))
        .route("/api/v1/timeseries/{topic}", get(timeseries))
        .route("/api/v1/command", post(submit_command))
        .route("/api/v1/commands/{ticket_id}", get(poll_command))
        .route("/api/v1/event", post(twin_event))
        .with_state(shell)
}
