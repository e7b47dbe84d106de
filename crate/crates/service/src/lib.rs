//! JSON-over-HTTP backend for the interactive registration console.
//!
//! One operator session at a time: a loaded case, the current rigid
//! parameters, saved alignments and at most one automatic registration job.

pub mod error;
pub mod slices;
pub mod state;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use simreg_core::metrics::MetricKind;
use simreg_core::nn::Network;
use simreg_core::optim::{OptimizerKind, TraceEntry};
use simreg_core::pipeline::{register, GroundTruth, RegistrationConfig};
use simreg_core::volgeom::RigidParams;
use simreg_core::Error as CoreError;

pub use error::ApiError;
pub use slices::{Encoding, Image, Plane, SlicePair};
pub use state::{evaluate_params, AppState, JobPhase, JobStatus, SavedAlignment};

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body; an empty body reads as `{}`.
fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| ApiError::Unprocessable(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

#[derive(Serialize, Deserialize)]
pub struct CaseList {
    pub cases: Vec<String>,
}

async fn list_cases(State(st): State<AppState>) -> ApiResult<Json<CaseList>> {
    Ok(Json(CaseList { cases: st.case_ids()? }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub case: Option<String>,
    pub dims: Option<[usize; 3]>,
    pub spacing: Option<[f64; 3]>,
    pub params: Option<RigidParams>,
    pub has_model: bool,
    pub default_metric: MetricKind,
    pub active_job: Option<u64>,
}

fn session_info(st: &AppState) -> SessionInfo {
    let (case, dims, spacing, params) = match st.snapshot() {
        Ok((id, c, p, _)) => (Some(id), Some(c.fixed.dims()), Some(c.fixed.geometry().spacing), Some(p)),
        Err(_) => (None, None, None, None),
    };
    let jobs = st.0.jobs.lock().unwrap();
    let active_job = jobs.active.filter(|id| jobs.map.get(id).is_some_and(|j| !j.snapshot().status.finished()));
    SessionInfo {
        case,
        dims,
        spacing,
        params,
        has_model: st.model().is_some(),
        default_metric: st.default_metric(),
        active_job,
    }
}

async fn get_session(State(st): State<AppState>) -> Json<SessionInfo> {
    Json(session_info(&st))
}

async fn load_case(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let s = st.clone();
    blocking(move || s.load(&id)).await?;
    Ok(Json(session_info(&st)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TransformRequest {
    pub params: RigidParams,
    #[serde(default)]
    pub metric: Option<MetricKind>,
    #[serde(default)]
    pub encoding: Encoding,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TransformResponse {
    pub case: String,
    pub params: RigidParams,
    pub metric: MetricKind,
    pub metric_value: f64,
    pub predicted_tre: Option<f64>,
    pub true_tre: Option<f64>,
    pub slices: Vec<SlicePair>,
}

/// Evaluates `params` on the loaded case and makes them the session's
/// current parameters.
async fn transform(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<TransformResponse>> {
    let req: TransformRequest = parse(&body)?;
    let (case_id, case, _, generation) = st.snapshot()?;
    let metric = req.metric.unwrap_or_else(|| st.default_metric());
    let s = st.clone();
    let params = req.params;
    let (readout, slices) = blocking(move || {
        let r = evaluate_params(&case, &params, metric, s.model())?;
        let slices = slices::slice_pairs(&case.fixed, &r.warped, req.encoding);
        Ok((r, slices))
    })
    .await?;
    st.with_session(|sess| {
        if sess.generation == generation {
            sess.params = params;
        }
        Ok(())
    })?;
    Ok(Json(TransformResponse {
        case: case_id,
        params,
        metric,
        metric_value: readout.metric_value,
        predicted_tre: readout.predicted_tre,
        true_tre: readout.true_tre,
        slices,
    }))
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterRequest {
    pub optimizer: Option<OptimizerKind>,
    pub metric: Option<MetricKind>,
    pub multipass: Option<bool>,
    /// DE and multipass seed.
    pub seed: Option<u64>,
    /// Full configuration; the fields above override it.
    pub config: Option<RegistrationConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobCreated {
    pub job: u64,
    pub status: JobPhase,
}

/// Starts a registration from the session's current parameters.
async fn start_register(State(st): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: RegisterRequest = parse(&body)?;
    let (case_id, case, params, generation) = st.snapshot()?;
    let metric = req.metric.or(req.config.as_ref().map(|c| c.metric)).unwrap_or_else(|| st.default_metric());
    let mut cfg = req.config.unwrap_or_default();
    cfg.metric = metric;
    if let Some(o) = req.optimizer {
        cfg.optimizer = o;
    }
    if let Some(m) = req.multipass {
        cfg.multipass = m;
    }
    if let Some(seed) = req.seed {
        cfg.dino.de.seed = seed;
        cfg.multipass_config.rng_seed = seed;
    }
    // The server's model is used in-process.
    cfg.model = None;
    if cfg.metric == MetricKind::Deep && st.model().is_none() {
        return Err(ApiError::Unprocessable("metric 'deep' needs a model; start the server with one".into()));
    }
    let job = st.0.jobs.lock().unwrap().start(&case_id)?;
    let id = job.snapshot().id;
    let s = st.clone();
    tokio::task::spawn_blocking(move || {
        if job.cancelled() {
            job.status.lock().unwrap().status = JobPhase::Cancelled;
            return;
        }
        job.status.lock().unwrap().status = JobPhase::Running;
        let mut observer = |e: &TraceEntry| {
            job.status.lock().unwrap().trace.push(e.clone());
            !job.cancelled()
        };
        let truth = GroundTruth::from(&*case);
        let outcome = register(&case.fixed, &case.moving, Some(&truth), &cfg, params, s.model(), &mut observer);
        if let Ok(r) = &outcome {
            let _ = s.with_session(|sess| {
                if sess.generation == generation {
                    sess.params = r.params;
                }
                Ok(())
            });
        }
        let mut status = job.status.lock().unwrap();
        match outcome {
            Ok(r) => {
                status.status = JobPhase::Done;
                status.result = Some(r);
            }
            Err(CoreError::Cancelled) => status.status = JobPhase::Cancelled,
            Err(e) => {
                status.status = JobPhase::Failed;
                status.error = Some(e.to_string());
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job: id, status: JobPhase::Pending })))
}

fn find_job(st: &AppState, id: u64) -> ApiResult<Arc<state::Job>> {
    st.0.jobs.lock().unwrap().map.get(&id).cloned().ok_or_else(|| ApiError::NotFound(format!("unknown job {id}")))
}

async fn get_job(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<JobStatus>> {
    Ok(Json(find_job(&st, id)?.snapshot()))
}

/// Requests cancellation; the job stops at its next iteration boundary.
async fn cancel_job(State(st): State<AppState>, Path(id): Path<u64>) -> ApiResult<Json<JobStatus>> {
    let job = find_job(&st, id)?;
    job.cancel.store(true, Ordering::Relaxed);
    Ok(Json(job.snapshot()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SaveRequest {
    pub name: String,
    #[serde(default)]
    pub metric: Option<MetricKind>,
}

async fn save(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<SavedAlignment>> {
    let req: SaveRequest = parse(&body)?;
    if req.name.trim().is_empty() {
        return Err(ApiError::Unprocessable("name must not be empty".into()));
    }
    let (_, case, params, generation) = st.snapshot()?;
    let metric = req.metric.unwrap_or_else(|| st.default_metric());
    let s = st.clone();
    let r = blocking(move || evaluate_params(&case, &params, metric, s.model())).await?;
    st.with_session(|sess| {
        if sess.generation != generation {
            return Err(ApiError::Conflict("case was reloaded during save".into()));
        }
        if sess.history.iter().any(|h| h.name == req.name) {
            return Err(ApiError::Conflict(format!("an alignment named '{}' already exists", req.name)));
        }
        // Timestamps never go backwards within a history.
        let last = sess.history.iter().map(|h| h.timestamp_ms).max().unwrap_or(0);
        let entry = SavedAlignment {
            name: req.name,
            params,
            metric,
            metric_value: r.metric_value,
            predicted_tre: r.predicted_tre,
            true_tre: r.true_tre,
            timestamp_ms: state::now_ms().max(last),
        };
        sess.history.push(entry.clone());
        st.persist_history(sess)?;
        Ok(Json(entry))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct History {
    pub case: String,
    pub entries: Vec<SavedAlignment>,
}

async fn history(State(st): State<AppState>) -> ApiResult<Json<History>> {
    st.with_session(|sess| {
        let mut entries = sess.history.clone();
        entries.sort_by_key(|e| e.timestamp_ms);
        Ok(Json(History { case: sess.case_id.clone(), entries }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RestoreRequest {
    pub name: String,
}

async fn restore(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<SavedAlignment>> {
    let req: RestoreRequest = parse(&body)?;
    st.with_session(|sess| {
        let entry = sess
            .history
            .iter()
            .find(|h| h.name == req.name)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no saved alignment named '{}'", req.name)))?;
        sess.params = entry.params;
        Ok(Json(entry))
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/cases", get(list_cases))
        .route("/cases/{id}/load", post(load_case))
        .route("/session", get(get_session))
        .route("/transform", post(transform))
        .route("/register", post(start_register))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/save", post(save))
        .route("/history", get(history))
        .route("/restore", post(restore))
        .with_state(state)
        .layer(CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any))
}

pub struct ServeOptions {
    pub addr: SocketAddr,
    pub cases_dir: PathBuf,
    /// Defaults to `cases_dir`.
    pub store_dir: Option<PathBuf>,
    pub model: Option<Network>,
    /// Static console assets served for paths no API route claims.
    pub static_dir: Option<PathBuf>,
}

pub async fn serve(opts: ServeOptions) -> std::io::Result<()> {
    let store = opts.store_dir.unwrap_or_else(|| opts.cases_dir.clone());
    let mut app = router(AppState::new(opts.cases_dir, store, opts.model));
    if let Some(dir) = opts.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    let listener = tokio::net::TcpListener::bind(opts.addr).await?;
    axum::serve(listener, app).await
}
