//! HTTP API over one loaded experiment.
//!
//! The dashboard payload is computed once at startup and served from shared
//! immutable state. What-if queries run on the blocking pool behind a
//! semaphore, with a per-request timeout, and are cached by spec.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use bandit_lens::dashboard::DashboardPayload;
use bandit_lens::report::ReportInputs;
use bandit_lens::{value_gain, AblationSpec, EstimatorKind, ValueGainError};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::trace::TraceLayer;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Body of `POST .../whatif`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub experiment_id: String,
    pub spec: AblationSpec,
    /// Replaces `spec.estimator` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorKind>,
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    detail: String,
}

fn error(status: StatusCode, code: &str, detail: impl Into<String>) -> Response {
    let body = serde_json::to_string(&ErrorBody {
        error: code,
        detail: detail.into(),
    })
    .expect("error body serializes");
    json_response(status, body)
}

fn json_response(status: StatusCode, body: impl Into<axum::body::Body>) -> Response {
    let mut res = (status, body.into()).into_response();
    res.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/json"),
    );
    res
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("section serializes");
    s.push('\n');
    s
}

// ── State ───────────────────────────────────────────────────────────────

/// Pre-rendered bodies of every read endpoint.
struct Rendered {
    dashboard: String,
    summary: String,
    variants: String,
    radar: String,
    context_bars: String,
}

impl Rendered {
    fn new(payload: &DashboardPayload) -> Self {
        Self {
            dashboard: payload.to_json(),
            summary: pretty(&payload.top_level),
            variants: pretty(&payload.variant_rows),
            radar: pretty(&payload.radar),
            context_bars: pretty(&payload.context_bars),
        }
    }
}

pub struct Experiment {
    inputs: ReportInputs,
    rendered: Rendered,
    whatif_cache: Mutex<HashMap<AblationSpec, Arc<String>>>,
}

impl Experiment {
    pub fn new(inputs: ReportInputs, payload: &DashboardPayload) -> Self {
        Self {
            inputs,
            rendered: Rendered::new(payload),
            whatif_cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn id(&self) -> &str {
        &self.inputs.config.experiment_id
    }
}

#[derive(Clone)]
pub struct AppState {
    experiments: Arc<HashMap<String, Arc<Experiment>>>,
    workers: Arc<Semaphore>,
    timeout: Duration,
}

impl AppState {
    pub fn new(experiments: Vec<Experiment>, workers: usize, timeout: Duration) -> Self {
        Self {
            experiments: Arc::new(
                experiments
                    .into_iter()
                    .map(|e| (e.id().to_string(), Arc::new(e)))
                    .collect(),
            ),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            timeout,
        }
    }

    /// Loads one experiment and computes its dashboard.
    pub fn from_inputs(inputs: ReportInputs) -> Result<Self, bandit_lens::DashboardError> {
        let payload = inputs.dashboard()?;
        let workers = std::thread::available_parallelism().map_or(2, |n| n.get());
        Ok(Self::new(
            vec![Experiment::new(inputs, &payload)],
            workers,
            DEFAULT_TIMEOUT,
        ))
    }

    #[allow(clippy::result_large_err)]
    fn experiment(&self, id: &str) -> Result<Arc<Experiment>, Response> {
        self.experiments.get(id).cloned().ok_or_else(|| {
            error(
                StatusCode::NOT_FOUND,
                "unknown_experiment",
                format!("no experiment `{id}`"),
            )
        })
    }
}

// ── Handlers ────────────────────────────────────────────────────────────

async fn healthz() -> &'static str {
    "ok"
}

fn section(
    pick: fn(&Rendered) -> &String,
) -> impl Fn(State<AppState>, Path<String>) -> std::future::Ready<Response> + Clone {
    move |State(state): State<AppState>, Path(id): Path<String>| {
        std::future::ready(match state.experiment(&id) {
            Ok(exp) => json_response(StatusCode::OK, pick(&exp.rendered).clone()),
            Err(res) => res,
        })
    }
}

async fn whatif(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Response {
    let exp = match state.experiment(&id) {
        Ok(exp) => exp,
        Err(res) => return res,
    };
    let request: WhatIfRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            return error(
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_spec",
                e.to_string(),
            )
        }
    };
    if request.experiment_id != id {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_spec",
            format!(
                "body names experiment `{}` but the path names `{id}`",
                request.experiment_id
            ),
        );
    }
    let mut spec = request.spec;
    if let Some(kind) = request.estimator {
        spec.estimator = kind;
    }
    let config = &exp.inputs.config;
    if let Err(e) = spec.validate(exp.inputs.view.catalog(), config.require_surviving_baseline) {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string());
    }
    if let Some(body) = exp
        .whatif_cache
        .lock()
        .expect("cache lock")
        .get(&spec)
        .cloned()
    {
        return json_response(StatusCode::OK, body.as_str().to_owned());
    }

    let permit = match state.workers.clone().acquire_owned().await {
        Ok(p) => p,
        Err(_) => {
            return error(
                StatusCode::SERVICE_UNAVAILABLE,
                "shutting_down",
                "worker pool closed",
            )
        }
    };
    let job_exp = exp.clone();
    let job_spec = spec.clone();
    let job = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        let inputs = &job_exp.inputs;
        value_gain(
            &inputs.view,
            &inputs.snapshot,
            &job_spec,
            inputs.config.estimator.clip,
            inputs.config.require_surviving_baseline,
        )
    });
    let outcome = match tokio::time::timeout(state.timeout, job).await {
        Err(_) => {
            return error(
                StatusCode::GATEWAY_TIMEOUT,
                "timeout",
                format!("what-if exceeded {:.0} s", state.timeout.as_secs_f64()),
            )
        }
        Ok(Err(join)) => {
            return error(
                StatusCode::INTERNAL_SERVER_ERROR,
                "worker_panic",
                join.to_string(),
            )
        }
        Ok(Ok(outcome)) => outcome,
    };
    match outcome {
        Ok(report) => {
            let body = Arc::new(pretty(&report));
            exp.whatif_cache
                .lock()
                .expect("cache lock")
                .insert(spec, body.clone());
            json_response(StatusCode::OK, body.as_str().to_owned())
        }
        Err(e @ ValueGainError::InvalidSpec(_)) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string())
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string()),
    }
}

/// Builds the router. `cors_origin` of `None` allows any origin.
pub fn router(state: AppState, cors_origin: Option<HeaderValue>) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE])
        .allow_origin(match cors_origin {
            Some(origin) => AllowOrigin::exact(origin),
            None => AllowOrigin::any(),
        });
    Router::new()
        .route("/healthz", get(healthz))
        .route(
            "/api/v1/experiments/{id}/dashboard",
            get(section(|r| &r.dashboard)),
        )
        .route(
            "/api/v1/experiments/{id}/summary",
            get(section(|r| &r.summary)),
        )
        .route(
            "/api/v1/experiments/{id}/variants",
            get(section(|r| &r.variants)),
        )
        .route("/api/v1/experiments/{id}/radar", get(section(|r| &r.radar)))
        .route(
            "/api/v1/experiments/{id}/context-bars",
            get(section(|r| &r.context_bars)),
        )
        .route("/api/v1/experiments/{id}/whatif", post(whatif))
        .layer(cors)
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}
