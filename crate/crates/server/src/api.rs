use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use gridsa_core::analytics::{
    correlate, scatter_export, summarize, AnalyticsError, CaseArchive, CorrelationStats, IndexEntry, Unit, Variable,
    Window,
};
use gridsa_core::criteria::Binding;
use gridsa_core::engine::{what_if, EngineError, WhatIfBase, WhatIfRequest};
use gridsa_core::policy::PolicyReport;
use gridsa_core::screener::{rank_insecure, CaseResult, CaseStatus, CycleReport, RankedCase};

use crate::{AppState, LoopStatus};

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn not_found(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, msg.into())
}

impl From<AnalyticsError> for ApiError {
    fn from(e: AnalyticsError) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::BaseNotFound(_) => StatusCode::NOT_FOUND,
            EngineError::Config(_) | EngineError::Snapshot(_) | EngineError::Modification(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/cycles", get(list_cycles))
        .route("/cycles/latest", get(latest_cycle))
        .route("/cycles/{ts}", get(cycle))
        .route("/cycles/{ts}/cases", get(cases))
        .route("/policy/latest", get(latest_policy))
        .route("/analytics/summary", get(summary))
        .route("/analytics/correlations", get(correlations))
        .route("/analytics/scatter", get(scatter))
        .route("/whatif", post(post_whatif))
        .with_state(state)
}

fn read<T>(s: &AppState, f: impl FnOnce(&CaseArchive) -> T) -> T {
    f(&s.archive.read().unwrap_or_else(|e| e.into_inner()))
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    cycles: usize,
    latest: Option<i64>,
    service: LoopStatus,
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    let (cycles, latest) = read(&s, |a| (a.len(), a.latest().map(|r| r.snapshot_ts)));
    let service = s.status.lock().unwrap_or_else(|e| e.into_inner()).clone();
    Json(Health {
        status: "ok",
        cycles,
        latest,
        service,
    })
}

async fn list_cycles(State(s): State<AppState>) -> Json<Vec<IndexEntry>> {
    Json(read(&s, |a| a.index()))
}

async fn latest_cycle(State(s): State<AppState>) -> ApiResult<Json<CycleReport>> {
    read(&s, |a| a.latest().cloned())
        .map(Json)
        .ok_or_else(|| not_found("no cycles yet"))
}

async fn cycle(State(s): State<AppState>, Path(ts): Path<i64>) -> ApiResult<Json<CycleReport>> {
    read(&s, |a| a.get(ts).cloned())
        .map(Json)
        .ok_or_else(|| not_found(format!("no cycle {ts}")))
}

#[derive(Deserialize)]
struct CasesQuery {
    status: Option<String>,
}

#[derive(Serialize)]
struct CasesView {
    snapshot_ts: i64,
    cases: Vec<CaseResult>,
    /// Insecure cases by decreasing severity.
    ranking: Vec<RankedCase>,
}

async fn cases(
    State(s): State<AppState>,
    Path(ts): Path<i64>,
    Query(q): Query<CasesQuery>,
) -> ApiResult<Json<CasesView>> {
    let status = match q.status.as_deref() {
        None | Some("all") => None,
        Some("secure") => Some(CaseStatus::Secure),
        Some("insecure") => Some(CaseStatus::Insecure),
        Some("failed") => Some(CaseStatus::Failed),
        Some(other) => return Err(bad_request(format!("unknown status {other:?}"))),
    };
    let report = read(&s, |a| a.get(ts).cloned()).ok_or_else(|| not_found(format!("no cycle {ts}")))?;
    let ranking = rank_insecure(&report, &s.cfg.severity);
    let cases = report
        .cases
        .into_iter()
        .filter(|c| status.is_none_or(|st| c.status == st))
        .collect();
    Ok(Json(CasesView {
        snapshot_ts: ts,
        cases,
        ranking,
    }))
}

#[derive(Serialize)]
struct PolicyView {
    snapshot_ts: i64,
    policy: PolicyReport,
}

async fn latest_policy(State(s): State<AppState>) -> ApiResult<Json<PolicyView>> {
    read(&s, |a| {
        a.cycles().iter().rev().find_map(|c| {
            c.policy.clone().map(|policy| PolicyView {
                snapshot_ts: c.snapshot_ts,
                policy,
            })
        })
    })
    .map(Json)
    .ok_or_else(|| not_found("no policy report yet"))
}

#[derive(Deserialize)]
struct WindowQuery {
    from: Option<i64>,
    to: Option<i64>,
    unit: Option<String>,
    var: Option<String>,
    flag: Option<String>,
    x: Option<String>,
    y: Option<String>,
    format: Option<String>,
}

impl WindowQuery {
    fn window(&self) -> Window {
        Window {
            from: self.from,
            to: self.to,
        }
    }

    fn unit(&self) -> ApiResult<Unit> {
        match self.unit.as_deref() {
            None | Some("cycle_case") => Ok(Unit::CycleCase),
            Some("cycle") => Ok(Unit::Cycle),
            Some(other) => Err(bad_request(format!("unknown unit {other:?}"))),
        }
    }

    fn flag(&self) -> ApiResult<Binding> {
        let raw = self.flag.as_deref().ok_or_else(|| bad_request("flag is required"))?;
        Binding::parse(raw).ok_or_else(|| bad_request(format!("unknown flag {raw:?}")))
    }
}

fn variable(raw: Option<&str>, name: &str) -> ApiResult<Variable> {
    let raw = raw.ok_or_else(|| bad_request(format!("{name} is required")))?;
    Variable::parse(raw).ok_or_else(|| bad_request(format!("unknown variable {raw:?}")))
}

async fn summary(State(s): State<AppState>, Query(q): Query<WindowQuery>) -> ApiResult<Response> {
    let unit = q.unit()?;
    let table = read(&s, |a| summarize(a, q.window(), unit))?;
    Ok(Json(table).into_response())
}

async fn correlations(State(s): State<AppState>, Query(q): Query<WindowQuery>) -> ApiResult<Json<Vec<CorrelationStats>>> {
    let flag = q.flag()?;
    let unit = q.unit()?;
    let vars = match q.var.as_deref() {
        None => vec![Variable::Inertia, Variable::Demand, Variable::Wind],
        Some(v) => vec![variable(Some(v), "var")?],
    };
    let out: Result<Vec<_>, _> = read(&s, |a| vars.iter().map(|&v| correlate(a, v, flag, q.window(), unit)).collect());
    Ok(Json(out?))
}

async fn scatter(State(s): State<AppState>, Query(q): Query<WindowQuery>) -> ApiResult<Response> {
    let x = variable(q.x.as_deref(), "x")?;
    let y = variable(q.y.as_deref(), "y")?;
    let flag = q.flag()?;
    let data = read(&s, |a| scatter_export(a, x, y, flag, q.window()))?;
    Ok(match q.format.as_deref() {
        Some("csv") => ([(header::CONTENT_TYPE, "text/csv")], data.to_csv()).into_response(),
        None | Some("json") => Json(data).into_response(),
        Some(other) => return Err(bad_request(format!("unknown format {other:?}"))),
    })
}

async fn post_whatif(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<CycleReport>> {
    let mut req: WhatIfRequest =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("what-if request: {e}")))?;
    let _permit = s
        .whatif_slots
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError(StatusCode::SERVICE_UNAVAILABLE, "shutting down".into()))?;
    if let WhatIfBase::Timestamp(ts) = req.base {
        let snap = read(&s, |a| a.snapshot(ts))
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
            .ok_or(EngineError::BaseNotFound(ts))?;
        req.base = WhatIfBase::Snapshot(Box::new(snap));
    }
    let cfg = s.cfg.clone();
    let report = tokio::task::spawn_blocking(move || what_if(&req, &cfg, &CaseArchive::in_memory()))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(report))
}
