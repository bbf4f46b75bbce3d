//! Annotation service: a JSON API over a dataset directory.
//!
//! All routes live under `/api`. Writes are serialised through one lock and
//! guarded by the per-video revision counter, so a client holding a stale
//! view gets `409` instead of silently overwriting someone else's edit.

pub mod store;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::UNIX_EPOCH;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use surgt_core::dataset::LabelEntry;
use surgt_core::{Keypoint2D, View};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use store::{Draft, DriftEntry, Session, SignOff, VideoDir};
pub use store::{EpipolarMode, ServiceConfig, StoreError};

pub struct AppState {
    pub root: PathBuf,
    pub config: ServiceConfig,
    write_lock: Mutex<()>,
}

impl AppState {
    pub fn new(root: PathBuf, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self { root, config, write_lock: Mutex::new(()) })
    }
}

/// Error body: `{"error": <kind>, "message": <text>}`.
#[derive(Debug)]
pub struct ApiError(StoreError);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self(e)
    }
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str) {
        use StoreError::*;
        match &self.0 {
            UnknownVideo(_) | UnknownSession(_) => (StatusCode::NOT_FOUND, "not_found"),
            OutOfRange { .. } => (StatusCode::NOT_FOUND, "out_of_range"),
            ConcurrentEdit { .. } => (StatusCode::CONFLICT, "concurrent_edit"),
            NonPositiveDisparity(_) => (StatusCode::UNPROCESSABLE_ENTITY, "non_positive_disparity"),
            EpipolarViolation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "epipolar_violation"),
            Geometry(_) => (StatusCode::UNPROCESSABLE_ENTITY, "geometry"),
            MissingKeypoints(_) => (StatusCode::UNPROCESSABLE_ENTITY, "missing_keypoints"),
            BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            Dataset(_) => (StatusCode::UNPROCESSABLE_ENTITY, "dataset"),
            Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = self.parts();
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": kind, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type AppStateRef = State<Arc<AppState>>;

/// Builds the router. `static_dir`, if given, is served for non-API paths.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/videos", get(list_videos))
        .route("/api/videos/{case}/{video}", get(video_summary))
        .route("/api/videos/{case}/{video}/frames/{index}", get(get_frame))
        .route("/api/videos/{case}/{video}/frames/{index}/{image}", get(get_image))
        .route("/api/videos/{case}/{video}/frames/{index}/keypoints", put(put_keypoints))
        .route("/api/videos/{case}/{video}/frames/{index}/flags", put(put_flags))
        .route("/api/videos/{case}/{video}/review-diff", get(review_diff))
        .route("/api/videos/{case}/{video}/review", post(post_review))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/step", post(step_session))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VideoSummary {
    pub case: String,
    pub video: String,
    pub frame_count: usize,
    pub committed: usize,
    pub complete: bool,
    pub revision: u64,
    pub reviews: Vec<SignOff>,
}

fn summary(v: &VideoDir, d: &Draft) -> VideoSummary {
    VideoSummary {
        case: v.case_id.clone(),
        video: v.video_id.clone(),
        frame_count: d.frames.len(),
        committed: d.committed(),
        complete: d.is_complete(),
        revision: d.revision,
        reviews: d.reviews.clone(),
    }
}

async fn list_videos(State(s): AppStateRef) -> ApiResult<Json<Vec<VideoSummary>>> {
    let mut out = Vec::new();
    for v in store::list_videos(&s.root)? {
        out.push(summary(&v, &store::load_draft(&v)?));
    }
    Ok(Json(out))
}

async fn video_summary(State(s): AppStateRef, Path((case, video)): Path<(String, String)>) -> ApiResult<Json<VideoSummary>> {
    let v = store::find_video(&s.root, &case, &video)?;
    Ok(Json(summary(&v, &store::load_draft(&v)?)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameView {
    pub index: usize,
    pub frame_count: usize,
    pub revision: u64,
    pub committed: bool,
    pub annotator: Option<String>,
    pub label: LabelEntry,
    pub left_image: String,
    pub right_image: String,
}

async fn get_frame(State(s): AppStateRef, Path((case, video, index)): Path<(String, String, usize)>) -> ApiResult<Json<FrameView>> {
    let v = store::find_video(&s.root, &case, &video)?;
    let draft = store::load_draft(&v)?;
    let f = draft.frames.get(index).ok_or(StoreError::OutOfRange { index, frame_count: draft.frames.len() })?;
    let base = format!("/api/videos/{case}/{video}/frames/{index}");
    Ok(Json(FrameView {
        index,
        frame_count: draft.frames.len(),
        revision: draft.revision,
        committed: f.committed,
        annotator: f.annotator.clone(),
        label: f.label.clone(),
        left_image: format!("{base}/left.png"),
        right_image: format!("{base}/right.png"),
    }))
}

async fn get_image(
    State(s): AppStateRef,
    Path((case, video, index, image)): Path<(String, String, usize, String)>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let v = store::find_video(&s.root, &case, &video)?;
    let view = match image.as_str() {
        "left.png" => View::Left,
        "right.png" => View::Right,
        _ => return Err(StoreError::UnknownVideo(format!("{case}/{video}/frames/{index}/{image}")).into()),
    };
    let path = v.frame_path(view, index);
    let meta = tokio::fs::metadata(&path).await.map_err(|_| {
        let frame_count = store::load_draft(&v).map(|d| d.frames.len()).unwrap_or(0);
        StoreError::OutOfRange { index, frame_count }
    })?;
    let mtime = meta.modified().ok().and_then(|t| t.duration_since(UNIX_EPOCH).ok()).map_or(0, |d| d.as_nanos());
    let etag = format!("\"{:x}-{:x}\"", meta.len(), mtime);
    let cache = [(header::ETAG, etag.clone()), (header::CACHE_CONTROL, "private, max-age=3600".to_string())];
    if headers.get(header::IF_NONE_MATCH).and_then(|h| h.to_str().ok()) == Some(etag.as_str()) {
        return Ok((StatusCode::NOT_MODIFIED, cache).into_response());
    }
    let bytes = tokio::fs::read(&path).await.map_err(|source| StoreError::Io { path: path.clone(), source })?;
    Ok((cache, [(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KeypointsRequest {
    pub left: Keypoint2D,
    pub right: Keypoint2D,
    pub revision: u64,
    #[serde(default)]
    pub annotator: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EditResponse {
    pub revision: u64,
    pub label: LabelEntry,
    pub complete: bool,
}

async fn put_keypoints(
    State(s): AppStateRef,
    Path((case, video, index)): Path<(String, String, usize)>,
    Json(req): Json<KeypointsRequest>,
) -> ApiResult<Json<EditResponse>> {
    let v = store::find_video(&s.root, &case, &video)?;
    let _guard = s.write_lock.lock().await;
    let (draft, label) = store::put_keypoints(&v, index, req.left, req.right, req.revision, req.annotator, &s.config)?;
    Ok(Json(EditResponse { revision: draft.revision, label, complete: draft.is_complete() }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FlagsRequest {
    pub is_difficult: bool,
    pub is_visible_in_both_stereo: bool,
    pub revision: u64,
    #[serde(default)]
    pub annotator: Option<String>,
}

async fn put_flags(
    State(s): AppStateRef,
    Path((case, video, index)): Path<(String, String, usize)>,
    Json(req): Json<FlagsRequest>,
) -> ApiResult<Json<EditResponse>> {
    let v = store::find_video(&s.root, &case, &video)?;
    let _guard = s.write_lock.lock().await;
    let draft = store::put_flags(&v, index, req.is_difficult, req.is_visible_in_both_stereo, req.revision, req.annotator, &s.config)?;
    let label = draft.frames[index].label.clone();
    Ok(Json(EditResponse { revision: draft.revision, label, complete: draft.is_complete() }))
}

#[derive(Debug, Deserialize)]
struct DiffQuery {
    threshold: Option<f64>,
}

async fn review_diff(
    State(s): AppStateRef,
    Path((case, video)): Path<(String, String)>,
    Query(q): Query<DiffQuery>,
) -> ApiResult<Json<Vec<DriftEntry>>> {
    let v = store::find_video(&s.root, &case, &video)?;
    let threshold = q.threshold.unwrap_or(s.config.drift_threshold_px);
    Ok(Json(store::review_diff(&store::load_draft(&v)?, threshold)))
}

async fn post_review(
    State(s): AppStateRef,
    Path((case, video)): Path<(String, String)>,
    Json(req): Json<SignOff>,
) -> ApiResult<Json<VideoSummary>> {
    let v = store::find_video(&s.root, &case, &video)?;
    let _guard = s.write_lock.lock().await;
    let draft = store::sign_off(&v, req, &s.config)?;
    Ok(Json(summary(&v, &draft)))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionRequest {
    pub case: String,
    pub video: String,
    pub annotator: String,
    #[serde(default)]
    pub review_mode: bool,
}

async fn create_session(State(s): AppStateRef, Json(req): Json<SessionRequest>) -> ApiResult<(StatusCode, Json<Session>)> {
    let v = store::find_video(&s.root, &req.case, &req.video)?;
    let _guard = s.write_lock.lock().await;
    let session = store::create_session(&s.root, &v, req.annotator, req.review_mode)?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(s): AppStateRef, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(store::load_session(&s.root, &id)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StepRequest {
    pub delta: i64,
}

async fn step_session(State(s): AppStateRef, Path(id): Path<String>, Json(req): Json<StepRequest>) -> ApiResult<Json<Session>> {
    let _guard = s.write_lock.lock().await;
    let mut session = store::load_session(&s.root, &id)?;
    let (case, video) = session.video.split_once('/').ok_or_else(|| StoreError::UnknownVideo(session.video.clone()))?;
    let n = store::load_draft(&store::find_video(&s.root, case, video)?)?.frames.len();
    let last = n.saturating_sub(1) as i64;
    session.cursor = (session.cursor as i64).saturating_add(req.delta).clamp(0, last) as usize;
    store::save_session(&s.root, &session)?;
    Ok(Json(session))
}
