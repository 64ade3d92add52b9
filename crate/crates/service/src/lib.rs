//! HTTP endpoint over one annotation session.
//!
//! | route                      | body                                        |
//! |----------------------------|---------------------------------------------|
//! | `GET  /api/session`        |                                             |
//! | `POST /api/threshold`      | `{"tau": 0.6}`                              |
//! | `POST /api/labels`         | `{"assignments": [{"id": 7, "label": 3}]}`  |
//! | `POST /api/undo`           |                                             |
//! | `GET  /api/thumbnail/{id}` |                                             |
//! | `POST /api/finalize`       |                                             |
//!
//! Failures answer with a 4xx status and `{"error": <code>, "detail": <text>}`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use salp_core::pipeline::{EvaluationReport, SessionState, SharedSession};
use salp_core::{Dataset, Error, Label, SampleId};

const PALETTE: [&str; 10] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Everything the handlers share. The dataset's features double as the
/// latent space the final classifier is trained in.
#[derive(Clone)]
pub struct AppState {
    session: SharedSession,
    dataset: Arc<Dataset>,
    report: Arc<Mutex<Option<EvaluationReport>>>,
}

impl AppState {
    pub fn new(session: SessionState, dataset: Dataset) -> salp_core::Result<Self> {
        let split = session.split();
        split.validate(dataset.len())?;
        if session.n_classes() != dataset.n_classes {
            return Err(Error::InvalidArgument(format!(
                "session declares {} classes but the dataset has {}",
                session.n_classes(),
                dataset.n_classes
            )));
        }
        Ok(Self { session: SharedSession::new(session), dataset: Arc::new(dataset), report: Arc::new(Mutex::new(None)) })
    }

    pub fn session(&self) -> &SharedSession {
        &self.session
    }

    /// Report produced by a successful finalize.
    pub fn report(&self) -> Option<EvaluationReport> {
        self.report.lock().clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointState {
    Supervised,
    Auto,
    Manual,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointView {
    pub id: SampleId,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub state: PointState,
    pub label: Option<Label>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassView {
    pub id: Label,
    pub name: String,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub supervised: usize,
    pub unsupervised: usize,
    pub auto: usize,
    pub manual: usize,
    pub unlabeled: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub protocol: String,
    pub status: String,
    pub tau: f64,
    pub history: usize,
    pub classes: Vec<ClassView>,
    pub counts: Counts,
    pub points: Vec<PointView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRequest {
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResponse {
    pub auto: usize,
    pub residue: usize,
    pub evicted: Vec<SampleId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub id: SampleId,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsRequest {
    pub assignments: Vec<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub applied: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UndoResponse {
    pub history: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportView {
    pub protocol: String,
    pub seed: u64,
    pub kappa: f64,
    pub propagation_accuracy: Option<f64>,
    pub s: usize,
    pub u: usize,
    pub lc: usize,
    pub li: usize,
    pub t: usize,
}

impl From<&EvaluationReport> for ReportView {
    fn from(r: &EvaluationReport) -> Self {
        Self {
            protocol: r.protocol.to_string(),
            seed: r.seed,
            kappa: r.kappa,
            propagation_accuracy: r.propagation_accuracy,
            s: r.n_s,
            u: r.n_u,
            lc: r.n_lc,
            li: r.n_li,
            t: r.n_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        Self { status, code, detail: detail.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Finalized | Error::EmptyHistory => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.code.into(), detail: self.detail })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

pub fn class_views(n_classes: usize) -> Vec<ClassView> {
    (0..n_classes)
        .map(|id| ClassView { id, name: id.to_string(), color: PALETTE[id % PALETTE.len()].to_string() })
        .collect()
}

/// The session as the client sees it. Points follow the projection's row
/// order, or ascending id when there is no projection.
pub fn session_view(session: &SessionState, dataset: &Dataset) -> SessionView {
    let split = session.split();
    let coords: std::collections::HashMap<SampleId, [f64; 2]> = session
        .projection()
        .map(|p| p.ids.iter().enumerate().map(|(row, &id)| (id, p.coords(row))).collect())
        .unwrap_or_default();
    let order: Vec<SampleId> = match session.projection() {
        Some(p) => {
            let training: std::collections::BTreeSet<SampleId> = split.training_ids().into_iter().collect();
            p.ids.iter().copied().filter(|id| training.contains(id)).collect()
        }
        None => split.training_ids(),
    };
    let supervised: std::collections::BTreeSet<SampleId> = split.s_ids.iter().copied().collect();
    let points = order
        .into_iter()
        .map(|id| {
            let xy = coords.get(&id);
            let confidence = session.propagation().get(id).map(|p| p.confidence);
            let (state, label) = if supervised.contains(&id) {
                (PointState::Supervised, dataset.samples[id].true_label)
            } else if session.auto_set().contains(&id) {
                (PointState::Auto, session.propagation().get(id).map(|p| p.label))
            } else if let Some(&l) = session.manual_labels().get(&id) {
                (PointState::Manual, Some(l))
            } else {
                (PointState::Unlabeled, None)
            };
            PointView { id, x: xy.map(|c| c[0]), y: xy.map(|c| c[1]), state, label, confidence }
        })
        .collect();
    let auto = session.auto_set().len();
    let manual = session.manual_labels().len();
    SessionView {
        protocol: session.protocol().to_string(),
        status: session.status().name().to_string(),
        tau: session.tau(),
        history: session.history().len(),
        classes: class_views(session.n_classes()),
        counts: Counts {
            supervised: split.s_ids.len(),
            unsupervised: split.u_ids.len(),
            auto,
            manual,
            unlabeled: split.u_ids.len() - auto - manual,
            test: split.t_ids.len(),
        },
        points,
    }
}

async fn get_session(State(app): State<AppState>) -> Json<SessionView> {
    Json(session_view(&app.session.read(), &app.dataset))
}

async fn post_threshold(State(app): State<AppState>, body: Bytes) -> ApiResult<ThresholdResponse> {
    let req: ThresholdRequest = parse_body(&body)?;
    let out = app.session.mutate(|s| s.set_tau(req.tau))?;
    Ok(Json(ThresholdResponse { auto: out.auto, residue: out.residue, evicted: out.evicted }))
}

async fn post_labels(State(app): State<AppState>, body: Bytes) -> ApiResult<LabelsResponse> {
    let req: LabelsRequest = parse_body(&body)?;
    let batch: Vec<(SampleId, Label)> = req.assignments.iter().map(|a| (a.id, a.label)).collect();
    let applied = app.session.mutate(|s| s.apply_manual_labels(&batch))?;
    Ok(Json(LabelsResponse { applied }))
}

async fn post_undo(State(app): State<AppState>) -> ApiResult<UndoResponse> {
    let history = app.session.mutate(|s| s.undo().map(|()| s.history().len()))?;
    Ok(Json(UndoResponse { history }))
}

async fn post_finalize(State(app): State<AppState>) -> ApiResult<ReportView> {
    let dataset = Arc::clone(&app.dataset);
    let session = app.session.clone();
    // Training can take a while; keep it off the async workers.
    let report = tokio::task::spawn_blocking(move || session.mutate(|s| s.finalize_and_train(&dataset, &dataset.features)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()))??;
    *app.report.lock() = Some(report.clone());
    Ok(Json(ReportView::from(&report)))
}

fn media_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

async fn get_thumbnail(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let sample = id
        .parse::<SampleId>()
        .ok()
        .and_then(|id| app.dataset.samples.get(id))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_sample", format!("no sample `{id}`")))?;
    let path = sample.thumbnail.as_ref().ok_or_else(|| {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "thumbnails_unsupported", "the dataset declares no thumbnails")
    })?;
    let bytes = std::fs::read(path).map_err(|e| {
        ApiError::new(StatusCode::NOT_FOUND, "thumbnail_missing", format!("{}: {e}", path.display()))
    })?;
    Ok((
        [(header::CONTENT_TYPE, media_type(path)), (header::CACHE_CONTROL, "public, max-age=31536000, immutable")],
        bytes,
    )
        .into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session", get(get_session))
        .route("/api/threshold", post(post_threshold))
        .route("/api/labels", post(post_labels))
        .route("/api/undo", post(post_undo))
        .route("/api/thumbnail/{id}", get(get_thumbnail))
        .route("/api/finalize", post(post_finalize))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
