//! JSON-over-HTTP access to sessions. Every session lives in
//! `<state_dir>/<id>.json` and is rewritten after each mutation; requests to
//! one session are serialised by a per-session lock.

use super::{ApiError, WirePose};
use crate::clinical::CupOrientation;
use crate::geom::{CameraIntrinsics, FrameId, Ray, Vec2, Vec3};
use crate::planning::{Annotation, AnnotationLabel, Trajectory3D, VirtualTool};
use crate::sim::{
    carm_pose, render_shot_png, replay, save_session, CalibrationConfig, Event, ExecutionNoise, LandmarkPixel, LocalizerModel, Metrics, Outcome,
    PhantomKind, PhantomParams, Session, SessionConfig, ToolTarget, CARM_SOURCE_DISTANCE,
};
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status()).unwrap_or(StatusCode::BAD_REQUEST);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Sessions loaded so far, each behind its own lock.
pub struct AppState {
    state_dir: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(state_dir: impl Into<PathBuf>) -> Result<Arc<Self>, ApiError> {
        let state_dir = state_dir.into();
        std::fs::create_dir_all(&state_dir).map_err(|e| ApiError::bad_request(format!("state dir {}: {e}", state_dir.display())))?;
        Ok(Arc::new(Self { state_dir, sessions: Mutex::new(HashMap::new()) }))
    }

    fn path(&self, id: &str) -> PathBuf {
        self.state_dir.join(format!("{id}.json"))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(ApiError::not_found(format!("session {id}")));
        }
        let mut map = self.sessions.lock().expect("session map lock");
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        let path = self.path(id);
        if !path.exists() {
            return Err(ApiError::not_found(format!("session {id}")));
        }
        let s = Arc::new(Mutex::new(replay(&path)?));
        map.insert(id.to_string(), s.clone());
        Ok(s)
    }

    fn read<T>(&self, id: &str, f: impl FnOnce(&Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let handle = self.session(id)?;
        let s = handle.lock().expect("session lock");
        f(&s)
    }

    /// Applies `f` and persists the session. A failed operation leaves the
    /// session untouched, so nothing is written; a failed write is rolled back.
    fn mutate<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let handle = self.session(id)?;
        let mut s = handle.lock().expect("session lock");
        let events = s.events.len();
        let out = f(&mut s)?;
        if let Err(e) = save_session(&self.path(id), &s) {
            *s = Session::from_events(&s.events[..events])?;
            return Err(e.into());
        }
        Ok(out)
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let body: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/acquire", post(acquire))
        .route("/sessions/{id}/annotations", post(annotate))
        .route("/sessions/{id}/plan/trajectory", post(plan_trajectory))
        .route("/sessions/{id}/plan/tool", post(plan_tool))
        .route("/sessions/{id}/plan/cup", post(plan_cup))
        .route("/sessions/{id}/execute", post(execute))
        .route("/sessions/{id}/shots/{k}/near_plane", patch(near_plane))
        .route("/sessions/{id}/shots/{k}/image", get(image))
        .route("/sessions/{id}/replay", get(replay_log))
        .route("/sessions/{id}/metrics", get(metrics))
        .with_state(state)
}

/// Binds `host:port` and serves until the process is stopped.
pub async fn serve(host: &str, port: u16, state_dir: PathBuf) -> Result<(), ApiError> {
    let state = AppState::new(state_dir)?;
    let listener = tokio::net::TcpListener::bind((host, port)).await.map_err(|e| ApiError::bad_request(format!("bind {host}:{port}: {e}")))?;
    axum::serve(listener, router(state)).await.map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub phantom: PhantomKind,
    pub phantom_params: Option<PhantomParams>,
    pub seed: Option<u64>,
    pub localizer: Option<LocalizerModel>,
    pub pixel_noise_sigma: Option<f64>,
    pub calibration: Option<CalibrationConfig>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: String,
    pub events: usize,
    pub intrinsics: CameraIntrinsics,
    pub landmarks: BTreeMap<String, Vec3>,
}

async fn create(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<CreateResponse> {
    let req: CreateRequest = parse(&body)?;
    let mut config = SessionConfig::noiseless(req.phantom, req.seed.unwrap_or_else(rand::random));
    if let Some(p) = req.phantom_params {
        config.phantom = p;
    }
    config.localizer = req.localizer.unwrap_or(config.localizer);
    config.pixel_noise_sigma = req.pixel_noise_sigma.unwrap_or(config.pixel_noise_sigma);
    config.calibration = req.calibration.unwrap_or(config.calibration);
    let id = format!("s{:016x}", rand::random::<u64>());
    let session = Session::create(id.clone(), config)?;
    save_session(&st.path(&id), &session)?;
    let resp = CreateResponse {
        id: id.clone(),
        events: session.events.len(),
        intrinsics: session.config.intrinsics,
        landmarks: session.phantom.world_landmarks(),
    };
    st.sessions.lock().expect("session map lock").insert(id, Arc::new(Mutex::new(session)));
    Ok(Json(resp))
}

/// C-arm placement by orbit angles around a point or a named landmark.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewRequest {
    pub target: Option<Vec3>,
    pub landmark: Option<String>,
    #[serde(default)]
    pub azimuth: f64,
    #[serde(default)]
    pub elevation: f64,
    pub distance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquireRequest {
    /// Commanded `^OR T_X`.
    pub pose: Option<WirePose>,
    pub view: Option<ViewRequest>,
    pub localizer: Option<LocalizerModel>,
    pub pixel_noise_sigma: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ShotSummary {
    pub shot: usize,
    /// Pose as reported by the localizer.
    pub source_pose: WirePose,
    pub near_plane: f64,
    pub intrinsics: CameraIntrinsics,
    pub landmark_pixels: BTreeMap<String, LandmarkPixel>,
    pub dose_units: f64,
    pub session_dose: f64,
    pub image_url: String,
}

async fn acquire(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<ShotSummary> {
    let req: AcquireRequest = parse(&body)?;
    st.mutate(&id, |s| {
        let pose = match (&req.pose, &req.view) {
            (Some(p), None) => p.to_transform(FrameId::X, FrameId::OR)?,
            (None, Some(v)) => {
                let target = match (&v.target, &v.landmark) {
                    (Some(t), None) => *t,
                    (None, Some(name)) => s.phantom.landmark_world(name).ok_or_else(|| ApiError::not_found(format!("landmark {name}")))?,
                    (None, None) => Vec3::zeros(),
                    _ => return Err(ApiError::bad_request("give either target or landmark")),
                };
                carm_pose(&target, v.distance.unwrap_or(CARM_SOURCE_DISTANCE), v.azimuth, v.elevation)?
            }
            _ => return Err(ApiError::bad_request("give exactly one of pose or view")),
        };
        let localizer = req.localizer.unwrap_or(s.config.localizer);
        let sigma = req.pixel_noise_sigma.unwrap_or(s.config.pixel_noise_sigma);
        let shot = s.acquire(pose, localizer, sigma)?.clone();
        let k = s.shots.len() - 1;
        Ok(Json(ShotSummary {
            shot: k,
            source_pose: WirePose::from_transform(&shot.frustum.source_pose),
            near_plane: shot.frustum.near_plane,
            intrinsics: shot.frustum.intrinsics,
            landmark_pixels: shot.landmark_pixels,
            dose_units: shot.dose_units,
            session_dose: s.dose(),
            image_url: format!("/sessions/{id}/shots/{k}/image"),
        }))
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    pub frustum_id: usize,
    pub point: Vec2,
    pub label: AnnotationLabel,
    #[serde(default)]
    pub author: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub index: usize,
    pub annotation: Annotation,
    pub ray: Ray,
}

async fn annotate(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<AnnotationResponse> {
    let req: AnnotationRequest = parse(&body)?;
    st.mutate(&id, |s| {
        let ann = Annotation { frustum_id: req.frustum_id, point: req.point, label: req.label, author: req.author, timestamp_ms: 0 };
        let (index, ray) = s.annotate(ann)?;
        Ok(Json(AnnotationResponse { index, annotation: s.annotations[index].clone(), ray }))
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRequest {
    /// Entry and exit on the first view, then entry and exit on the second.
    pub annotations: [usize; 4],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryResponse {
    pub plan: usize,
    pub trajectory: Trajectory3D,
}

async fn plan_trajectory(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<TrajectoryResponse> {
    let req: TrajectoryRequest = parse(&body)?;
    st.mutate(&id, |s| {
        let trajectory = s.plan_trajectory(req.annotations)?;
        Ok(Json(TrajectoryResponse { plan: s.plans.len() - 1, trajectory }))
    })
}

fn default_tool_length() -> f64 {
    150.0
}

fn default_tool_samples() -> usize {
    16
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolRequest {
    /// `^OR T_T`; the wire runs along the tool `+z` axis from its origin.
    pub pose: WirePose,
    #[serde(default = "default_tool_length")]
    pub length: f64,
    #[serde(default = "default_tool_samples")]
    pub samples: usize,
    pub targets: Option<Vec<ToolTarget>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ToolResponse {
    pub plan: usize,
    pub projections: Vec<Vec<Option<Vec2>>>,
    pub views: Vec<usize>,
    pub consensus_residual: Option<f64>,
}

async fn plan_tool(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<ToolResponse> {
    let req: ToolRequest = parse(&body)?;
    st.mutate(&id, |s| {
        let tool = VirtualTool::kwire(req.length, req.samples, req.pose.to_transform(FrameId::T, FrameId::OR)?)?;
        let p = s.plan_tool(tool, req.targets)?;
        Ok(Json(ToolResponse { plan: s.plans.len() - 1, projections: p.projections, views: p.views, consensus_residual: p.consensus_residual }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CupResponse {
    pub plan: usize,
    pub axis: Vec3,
    pub center: Vec3,
    pub residual: f64,
}

async fn plan_cup(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<CupResponse> {
    let target: CupOrientation = parse(&body)?;
    st.mutate(&id, |s| {
        let p = s.plan_cup(target)?;
        Ok(Json(CupResponse { plan: s.plans.len() - 1, axis: p.axis, center: p.center, residual: p.residual }))
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecuteRequest {
    pub plan: usize,
    #[serde(default)]
    pub noise: ExecutionNoise,
}

async fn execute(State(st): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Outcome> {
    let req: ExecuteRequest = parse(&body)?;
    st.mutate(&id, |s| Ok(Json(s.execute(req.plan, req.noise)?)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NearPlaneRequest {
    pub n: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NearPlaneResponse {
    pub shot: usize,
    pub near_plane: f64,
    /// `n / f`.
    pub scale: f64,
    /// `^OR T_I`.
    pub image_pose: WirePose,
}

async fn near_plane(State(st): State<Arc<AppState>>, Path((id, k)): Path<(String, usize)>, body: Bytes) -> ApiResult<NearPlaneResponse> {
    let req: NearPlaneRequest = parse(&body)?;
    st.mutate(&id, |s| {
        let pose = s.set_near_plane(k, req.n)?;
        let fr = &s.shots[k].frustum;
        Ok(Json(NearPlaneResponse { shot: k, near_plane: fr.near_plane, scale: fr.scale(), image_pose: WirePose::from_transform(&pose) }))
    })
}

async fn image(State(st): State<Arc<AppState>>, Path((id, k)): Path<(String, usize)>) -> Result<Response, ApiError> {
    let png = st.read(&id, |s| {
        let shot = s.shots.get(k).ok_or_else(|| ApiError::not_found(format!("shot {k}")))?;
        Ok(render_shot_png(shot)?)
    })?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReplayResponse {
    pub id: String,
    pub events: Vec<Event>,
}

async fn replay_log(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<ReplayResponse> {
    st.read(&id, |s| Ok(Json(ReplayResponse { id: s.id.clone(), events: s.events.clone() })))
}

async fn metrics(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Metrics> {
    st.read(&id, |s| Ok(Json(s.metrics())))
}
