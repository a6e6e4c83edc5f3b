use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pdm_core::downtime::{forecast_downtime, DowntimeForecast, MaintenanceEvent, OperatingEnvelope, Violation};
use pdm_core::pipeline::recent_frames;
use pdm_core::store::is_valid_machine_id;
use pdm_core::{Alert, AlertState, MachineStatus, ParameterId, SensorReading, SeriesFrame};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ApiError, ErrorCode};
use crate::state::AppState;

pub const MAX_BODY_BYTES: usize = 32 * 1024 * 1024;
pub const MAX_HORIZON_STEPS: usize = 10_000;

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/readings", post(ingest))
        .route("/api/v1/machines", get(machines))
        .route("/api/v1/machines/{id}/latest", get(latest))
        .route("/api/v1/machines/{id}/series", get(series))
        .route("/api/v1/machines/{id}/forecast", get(forecast))
        .route("/api/v1/machines/{id}/envelope", get(get_envelope).put(put_envelope))
        .route("/api/v1/machines/{id}/alerts", get(alerts))
        .route("/api/v1/machines/{id}/maintenance", get(maintenance).post(add_maintenance))
        .route("/api/v1/alerts/{alert_id}/ack", post(ack))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn not_found(method: Method, uri: Uri) -> ApiError {
    ApiError::not_found(format!("no route for {method} {}", uri.path()))
}

async fn method_not_allowed(method: Method, uri: Uri) -> Response {
    let err = ApiError::new(ErrorCode::BadRequest, format!("method {method} not allowed on {}", uri.path()));
    (StatusCode::METHOD_NOT_ALLOWED, Json(err)).into_response()
}

fn body(b: Result<Bytes, BytesRejection>) -> Result<Bytes, ApiError> {
    b.map_err(|e| ApiError::bad_request(format!("unreadable body: {e}")))
}

fn json_body<T: for<'de> Deserialize<'de>>(b: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    serde_json::from_slice(&body(b)?).map_err(|e| ApiError::bad_request(format!("invalid JSON payload: {e}")))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(t)| t).map_err(|e| ApiError::bad_request(format!("invalid query: {}", e.body_text())))
}

/// Validates the id syntax and that the machine has telemetry.
fn known_machine(s: &AppState, id: Result<Path<String>, PathRejection>) -> Result<String, ApiError> {
    let Path(id) = id.map_err(|e| ApiError::bad_request(e.body_text()))?;
    if !is_valid_machine_id(&id) {
        return Err(ApiError::bad_request(format!("invalid machine id `{id}`")));
    }
    if !s.store.contains_machine(&id) {
        return Err(ApiError::not_found(format!("unknown machine `{id}`")));
    }
    Ok(id)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Latest grid frames of a machine, without a trailing partially-filled row.
pub fn settled_frames(s: &AppState, machine: &str, rows: usize) -> Result<Vec<SeriesFrame>, ApiError> {
    let mut frames = recent_frames(&s.store, machine, rows + 1, &s.grid)?;
    while frames.last().is_some_and(|f| !f.is_complete()) {
        frames.pop();
    }
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStatus {
    pub loaded: bool,
    pub path: Option<String>,
    pub members: Vec<String>,
    pub history_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub model: ModelStatus,
    pub poll_interval_ms: u64,
    pub period_ms: i64,
    pub parameters: Vec<ParameterId>,
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Health> {
    let model = match &s.model {
        Some(m) => ModelStatus {
            loaded: true,
            path: s.model_path.as_ref().map(|p| p.display().to_string()),
            members: m.members().iter().map(|f| f.name().to_string()).collect(),
            history_len: Some(m.pipeline().history_len()),
        },
        None => ModelStatus { loaded: false, path: None, members: Vec::new(), history_len: None },
    };
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        model,
        poll_interval_ms: s.server.poll_interval_ms,
        period_ms: s.grid.period_ms,
        parameters: s.schema().parameters(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    /// Active envelope violations per machine after the batch.
    pub violations: Vec<(String, Vec<Violation>)>,
}

/// One batch element. Values may arrive as strings (`"NaN"`) so that
/// non-finite numbers are rejected per reading rather than failing the batch.
fn parse_reading(v: &Value) -> Result<SensorReading, String> {
    let obj = v.as_object().ok_or("reading must be a JSON object")?;
    let field = |k: &str| obj.get(k).ok_or_else(|| format!("missing field `{k}`"));
    let machine_id = field("machine_id")?.as_str().ok_or("`machine_id` must be a string")?.to_string();
    let timestamp = field("timestamp_ms")?.as_i64().ok_or("`timestamp_ms` must be an integer")?;
    let parameter: ParameterId = field("parameter")?
        .as_str()
        .ok_or("`parameter` must be a string")?
        .parse()
        .map_err(|e: pdm_core::schema::SchemaError| e.to_string())?;
    let value = match field("value")? {
        Value::Number(n) => n.as_f64().ok_or("`value` is not representable")?,
        Value::String(s) => s.trim().parse::<f64>().map_err(|_| format!("`value` `{s}` is not a number"))?,
        _ => return Err("`value` must be a number".into()),
    };
    Ok(SensorReading { machine_id, timestamp, parameter, value })
}

async fn ingest(State(s): State<Arc<AppState>>, b: Result<Bytes, BytesRejection>) -> ApiResult<IngestResponse> {
    let payload: Value = json_body(b)?;
    let items = match payload {
        Value::Array(items) => items,
        Value::Object(mut o) => match o.remove("readings") {
            Some(Value::Array(items)) => items,
            _ => return Err(ApiError::bad_request("expected an array of readings or {\"readings\": [...]}")),
        },
        _ => return Err(ApiError::bad_request("expected an array of readings or {\"readings\": [...]}")),
    };
    blocking(move || {
        let mut rejected = Vec::new();
        let mut valid = Vec::new();
        let mut index = Vec::new();
        for (i, item) in items.iter().enumerate() {
            match parse_reading(item) {
                Ok(r) => {
                    valid.push(r);
                    index.push(i);
                }
                Err(reason) => rejected.push(Rejection { index: i, reason }),
            }
        }
        let touched: BTreeSet<String> = valid.iter().map(|r| r.machine_id.clone()).collect();
        let (accepted, store_rejects) = s.store.append_batch(valid)?;
        for (i, e) in store_rejects {
            rejected.push(Rejection { index: index[i], reason: e.to_string() });
        }
        rejected.sort_by_key(|r| r.index);
        let now = s.now();
        let mut violations = Vec::new();
        for machine in touched.into_iter().filter(|m| s.store.contains_machine(m)) {
            let sustain = s.controller().envelope(&machine).sustain_steps;
            let frames = settled_frames(&s, &machine, sustain)?;
            if frames.is_empty() {
                continue;
            }
            let (v, _) = s.controller().observe(&machine, &frames, now)?;
            violations.push((machine, v));
        }
        Ok(Json(IngestResponse { accepted, rejected, violations }))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSummary {
    pub machine_id: String,
    pub status: MachineStatus,
    pub first_ms: i64,
    pub last_ms: i64,
}

async fn machines(State(s): State<Arc<AppState>>) -> ApiResult<Vec<MachineSummary>> {
    let c = s.controller();
    let mut out = Vec::new();
    for m in s.store.machines() {
        let (first_ms, last_ms) = s.store.extent(&m)?;
        out.push(MachineSummary { status: c.status(&m), machine_id: m, first_ms, last_ms });
    }
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latest {
    pub machine_id: String,
    pub timestamp_ms: i64,
    pub values: Vec<Option<f64>>,
    pub parameters: Vec<ParameterId>,
    pub status: MachineStatus,
}

async fn latest(State(s): State<Arc<AppState>>, id: Result<Path<String>, PathRejection>) -> ApiResult<Latest> {
    let id = known_machine(&s, id)?;
    let frame = s.store.latest_frame(&id)?;
    Ok(Json(Latest {
        status: s.controller().status(&id),
        machine_id: id,
        timestamp_ms: frame.timestamp,
        values: frame.values,
        parameters: s.schema().parameters(),
    }))
}

#[derive(Debug, Deserialize)]
struct SeriesQuery {
    parameter: String,
    from_ms: Option<i64>,
    to_ms: Option<i64>,
}

async fn series(
    State(s): State<Arc<AppState>>,
    id: Result<Path<String>, PathRejection>,
    q: Result<Query<SeriesQuery>, QueryRejection>,
) -> ApiResult<Vec<SensorReading>> {
    let q = query(q)?;
    let id = known_machine(&s, id)?;
    let parameter: ParameterId = q.parameter.parse().map_err(|e: pdm_core::schema::SchemaError| ApiError::bad_request(e.to_string()))?;
    let (t0, t1) = (q.from_ms.unwrap_or(i64::MIN), q.to_ms.unwrap_or(i64::MAX));
    if t0 > t1 {
        return Err(ApiError::bad_request(format!("from_ms {t0} is after to_ms {t1}")));
    }
    Ok(Json(s.store.query_range(&id, parameter, t0, t1)?))
}

#[derive(Debug, Deserialize)]
struct ForecastQuery {
    horizon_steps: Option<usize>,
}

/// Runs the ensemble on the machine's latest history, exactly as the
/// in-process predictor would.
pub fn compute_forecast(s: &AppState, machine: &str, horizon: usize) -> Result<DowntimeForecast, ApiError> {
    let Some(model) = &s.model else {
        return Err(ApiError::conflict("no trained model"));
    };
    let members = model.members();
    let need = members.iter().map(|m| m.history_len()).max().unwrap_or(1);
    let frames = settled_frames(s, machine, need)?;
    let envelope = s.controller().envelope(machine).clone();
    Ok(forecast_downtime(machine, &frames, s.grid.period_ms, &members, &envelope, s.schema(), horizon)?)
}

async fn forecast(
    State(s): State<Arc<AppState>>,
    id: Result<Path<String>, PathRejection>,
    q: Result<Query<ForecastQuery>, QueryRejection>,
) -> ApiResult<DowntimeForecast> {
    let q = query(q)?;
    let id = known_machine(&s, id)?;
    let horizon = q.horizon_steps.unwrap_or(s.server.horizon_steps);
    if horizon == 0 || horizon > MAX_HORIZON_STEPS {
        return Err(ApiError::bad_request(format!("horizon_steps must lie in 1..={MAX_HORIZON_STEPS}")));
    }
    blocking(move || {
        let f = compute_forecast(&s, &id, horizon)?;
        s.controller().apply_forecast(&f, s.now())?;
        Ok(Json(f))
    })
    .await
}

async fn get_envelope(State(s): State<Arc<AppState>>, id: Result<Path<String>, PathRejection>) -> ApiResult<OperatingEnvelope> {
    let id = known_machine(&s, id)?;
    Ok(Json(s.controller().envelope(&id).clone()))
}

async fn put_envelope(
    State(s): State<Arc<AppState>>,
    id: Result<Path<String>, PathRejection>,
    b: Result<Bytes, BytesRejection>,
) -> ApiResult<OperatingEnvelope> {
    let id = known_machine(&s, id)?;
    let envelope: OperatingEnvelope = json_body(b)?;
    let mut c = s.controller();
    c.set_envelope(&id, envelope)?;
    s.persist_envelopes(c.envelopes())
        .map_err(|e| ApiError::internal(format!("cannot persist envelopes: {e}")))?;
    Ok(Json(c.envelope(&id).clone()))
}

#[derive(Debug, Deserialize)]
struct AlertQuery {
    state: Option<String>,
}

pub fn parse_state(s: &str) -> Result<AlertState, ApiError> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| ApiError::bad_request(format!("unknown alert state `{s}` (open, acknowledged, resolved)")))
}

async fn alerts(
    State(s): State<Arc<AppState>>,
    id: Result<Path<String>, PathRejection>,
    q: Result<Query<AlertQuery>, QueryRejection>,
) -> ApiResult<Vec<Alert>> {
    let q = query(q)?;
    let id = known_machine(&s, id)?;
    let state = q.state.as_deref().map(parse_state).transpose()?;
    Ok(Json(s.controller().alerts(&id, state)))
}

async fn ack(State(s): State<Arc<AppState>>, id: Result<Path<String>, PathRejection>) -> ApiResult<Alert> {
    let Path(raw) = id.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let id: u64 = raw.parse().map_err(|_| ApiError::bad_request(format!("invalid alert id `{raw}`")))?;
    let now = s.now();
    Ok(Json(s.controller().acknowledge(id, now)?))
}

async fn maintenance(State(s): State<Arc<AppState>>, id: Result<Path<String>, PathRejection>) -> ApiResult<Vec<MaintenanceEvent>> {
    let id = known_machine(&s, id)?;
    Ok(Json(s.controller().maintenance_events(&id)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceRequest {
    /// Defaults to the server clock.
    pub timestamp_ms: Option<i64>,
    pub note: String,
    pub performed_by: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceResponse {
    pub event: MaintenanceEvent,
    pub resolved_alert_ids: Vec<u64>,
}

async fn add_maintenance(
    State(s): State<Arc<AppState>>,
    id: Result<Path<String>, PathRejection>,
    b: Result<Bytes, BytesRejection>,
) -> ApiResult<MaintenanceResponse> {
    let req: MaintenanceRequest = json_body(b)?;
    let id = known_machine(&s, id)?;
    let now = s.now();
    let event = MaintenanceEvent {
        machine_id: id,
        timestamp_ms: req.timestamp_ms.unwrap_or(now),
        note: req.note,
        performed_by: req.performed_by,
    };
    let resolved_alert_ids = s.controller().record_maintenance(event.clone(), true, now)?;
    Ok(Json(MaintenanceResponse { event, resolved_alert_ids }))
}
