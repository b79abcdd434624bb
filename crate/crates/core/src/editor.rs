//! HTTP service behind the interactive skeleton editor.
//!
//! One in-memory session holds the working skeleton and body-part config.
//! Mutations take the write lock and bump the revision; builds and previews
//! work on a snapshot taken under the read lock.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::balloon::{build_shape, export_obj, extract_mesh, BalloonError, BodyPartConfig, MIN_RESOLUTION};
use crate::control::{project_pose, rasterize_pose, render_depth, PoseStyle};
use crate::geometry::{Camera, SphericalSample, Vec3};
use crate::skeleton::{default_skeleton, KeypointName, Skeleton, SkeletonDocument};

pub const PREVIEW_SIZE: u32 = 256;
pub const DEFAULT_MESH_RESOLUTION: usize = 48;
pub const MAX_MESH_RESOLUTION: usize = 256;

#[derive(Debug, Clone)]
pub struct BuiltMesh {
    pub revision: u64,
    pub resolution: usize,
    pub obj: String,
    pub vertices: usize,
    pub triangles: usize,
    pub surface_area: f64,
    pub watertight: bool,
}

impl BuiltMesh {
    pub fn id(&self) -> String {
        format!("r{}-n{}", self.revision, self.resolution)
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub skeleton: Skeleton,
    pub config: BodyPartConfig,
    pub mesh: Option<Arc<BuiltMesh>>,
    pub revision: u64,
}

impl SessionState {
    pub fn mesh_is_stale(&self) -> bool {
        self.mesh.as_ref().is_none_or(|m| m.revision != self.revision)
    }
}

/// Persisted subset of the session.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDocument {
    pub skeleton: SkeletonDocument,
    pub config: BodyPartConfig,
}

pub struct Editor {
    state: RwLock<SessionState>,
    state_path: Option<PathBuf>,
}

impl Editor {
    pub fn new() -> Self {
        Self::with(default_skeleton(), BodyPartConfig::default(), None)
    }

    fn with(skeleton: Skeleton, config: BodyPartConfig, state_path: Option<PathBuf>) -> Self {
        Self { state: RwLock::new(SessionState { skeleton, config, mesh: None, revision: 0 }), state_path }
    }

    /// Loads the session from `path` when it exists and persists every
    /// mutation back to it.
    pub fn with_state_file(path: &Path) -> anyhow::Result<Self> {
        let (skeleton, config) = if path.exists() {
            let doc: StateDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            config_checked(&doc.config)?;
            (Skeleton::from_document(doc.skeleton)?, doc.config)
        } else {
            (default_skeleton(), BodyPartConfig::default())
        };
        Ok(Self::with(skeleton, config, Some(path.to_path_buf())))
    }

    pub fn snapshot(&self) -> SessionState {
        self.state.read().clone()
    }

    fn mutate(&self, f: impl FnOnce(&mut SessionState)) -> Result<u64, ApiError> {
        let mut st = self.state.write();
        f(&mut st);
        st.revision += 1;
        if let Some(path) = &self.state_path {
            let doc = StateDocument { skeleton: st.skeleton.to_document(), config: st.config };
            let text = serde_json::to_string_pretty(&doc).expect("state serializes");
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, text)
                .and_then(|_| std::fs::rename(&tmp, path))
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("persisting state: {e}")))?;
        }
        Ok(st.revision)
    }
}

impl Default for Editor {
    fn default() -> Self {
        Self::new()
    }
}

fn config_checked(config: &BodyPartConfig) -> Result<(), BalloonError> {
    config.validate()
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    fn field(status: StatusCode, field: &str, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into(), "field": field }) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses a JSON body, naming the offending field on failure when serde
/// reports one.
fn parse_body<T: for<'de> Deserialize<'de>>(bytes: &[u8], default_field: &str) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field `"))
            .unwrap_or(default_field)
            .to_string();
        ApiError::field(StatusCode::BAD_REQUEST, &field, msg)
    })
}

async fn get_skeleton(State(ed): State<Arc<Editor>>) -> Json<serde_json::Value> {
    let st = ed.state.read();
    Json(json!({
        "revision": st.revision,
        "skeleton": st.skeleton.to_document(),
        "mesh_stale": st.mesh_is_stale(),
    }))
}

async fn put_keypoint(State(ed): State<Arc<Editor>>, UrlPath(name): UrlPath<String>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let kp: KeypointName =
        name.parse().map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown keypoint {name}")))?;
    let p: [f64; 3] = parse_body(&body, "position")?;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::field(StatusCode::BAD_REQUEST, "position", "coordinates must be finite"));
    }
    let revision = ed.mutate(|st| st.skeleton.set(kp, Vec3::from(p)))?;
    Ok(Json(json!({ "revision": revision })))
}

async fn get_config(State(ed): State<Arc<Editor>>) -> Json<serde_json::Value> {
    let st = ed.state.read();
    Json(json!({ "revision": st.revision, "config": st.config }))
}

async fn put_config(State(ed): State<Arc<Editor>>, body: Bytes) -> ApiResult<Json<serde_json::Value>> {
    let config: BodyPartConfig = parse_body(&body, "config")?;
    config_checked(&config).map_err(|e| match &e {
        BalloonError::InvalidConfig(field) => ApiError::field(StatusCode::BAD_REQUEST, field, e.to_string()),
        _ => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
    })?;
    let revision = ed.mutate(|st| st.config = config)?;
    Ok(Json(json!({ "revision": revision })))
}

async fn reset_skeleton(State(ed): State<Arc<Editor>>) -> ApiResult<Json<serde_json::Value>> {
    let revision = ed.mutate(|st| st.skeleton = default_skeleton())?;
    Ok(Json(json!({ "revision": revision })))
}

#[derive(Debug, Deserialize)]
struct MeshQuery {
    resolution: Option<usize>,
}

fn mesh_summary(m: &BuiltMesh, current_revision: u64) -> serde_json::Value {
    json!({
        "mesh_id": m.id(),
        "revision": m.revision,
        "resolution": m.resolution,
        "vertices": m.vertices,
        "triangles": m.triangles,
        "surface_area": m.surface_area,
        "watertight": m.watertight,
        "stale": m.revision != current_revision,
    })
}

/// Builds the mesh for the current snapshot.
pub fn build_mesh(snapshot: &SessionState, resolution: usize) -> Result<BuiltMesh, BalloonError> {
    let shape = build_shape(&snapshot.skeleton, &snapshot.config)?;
    let mesh = extract_mesh(&shape, resolution)?;
    Ok(BuiltMesh {
        revision: snapshot.revision,
        resolution,
        obj: export_obj(&mesh),
        vertices: mesh.vertices.len(),
        triangles: mesh.triangles.len(),
        surface_area: mesh.surface_area(),
        watertight: mesh.is_watertight(),
    })
}

async fn post_mesh(State(ed): State<Arc<Editor>>, Query(q): Query<MeshQuery>) -> ApiResult<Json<serde_json::Value>> {
    let resolution = q.resolution.unwrap_or(DEFAULT_MESH_RESOLUTION);
    if !(MIN_RESOLUTION..=MAX_MESH_RESOLUTION).contains(&resolution) {
        return Err(ApiError::field(
            StatusCode::BAD_REQUEST,
            "resolution",
            format!("resolution must be within {MIN_RESOLUTION}..={MAX_MESH_RESOLUTION}"),
        ));
    }
    let snapshot = ed.snapshot();
    let built = tokio::task::spawn_blocking(move || build_mesh(&snapshot, resolution))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| match &e {
            BalloonError::DegenerateBone(a, b) => degenerate_error(&e, *a, *b),
            _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        })?;
    let built = Arc::new(built);
    let mut st = ed.state.write();
    // keep the newest build if a slower request for an older revision finishes last
    if st.mesh.as_ref().is_none_or(|m| m.revision <= built.revision) {
        st.mesh = Some(built.clone());
    }
    Ok(Json(mesh_summary(&built, st.revision)))
}

fn degenerate_error(e: &BalloonError, a: KeypointName, b: KeypointName) -> ApiError {
    ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        body: json!({ "error": e.to_string(), "bone": [a.as_str(), b.as_str()] }),
    }
}

async fn get_mesh_obj(State(ed): State<Arc<Editor>>) -> ApiResult<Response> {
    let mesh = ed.state.read().mesh.clone();
    let mesh = mesh.ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no mesh has been built"))?;
    Ok(([(header::CONTENT_TYPE, "model/obj")], mesh.obj.clone()).into_response())
}

#[derive(Debug, Deserialize)]
struct PreviewQuery {
    azimuth: Option<f64>,
    polar: Option<f64>,
    radius: Option<f64>,
}

/// Preview camera on the sphere around the skeleton's bounding-box center.
pub fn preview_camera(skeleton: &Skeleton, azimuth: f64, polar: f64, radius: f64) -> Result<Camera, String> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err("radius must be positive".into());
    }
    if !(0.0..=180.0).contains(&polar) || !azimuth.is_finite() {
        return Err("polar must be within [0, 180] and azimuth finite".into());
    }
    let center = skeleton.bounding_box().center();
    let offset = SphericalSample { radius, azimuth, polar }.offset();
    Camera::new(center + offset, center, Camera::DEFAULT_FOV_Y, PREVIEW_SIZE, PREVIEW_SIZE).map_err(|e| e.to_string())
}

fn preview_params(q: &PreviewQuery, skeleton: &Skeleton) -> ApiResult<Camera> {
    preview_camera(skeleton, q.azimuth.unwrap_or(0.0), q.polar.unwrap_or(90.0), q.radius.unwrap_or(1.5))
        .map_err(|m| ApiError::field(StatusCode::BAD_REQUEST, "camera", m))
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn preview_pose(State(ed): State<Arc<Editor>>, Query(q): Query<PreviewQuery>) -> ApiResult<Response> {
    let skeleton = ed.state.read().skeleton.clone();
    let camera = preview_params(&q, &skeleton)?;
    let pose = project_pose(&skeleton, &camera);
    let img = rasterize_pose(&pose, &PoseStyle::for_width(PREVIEW_SIZE as usize));
    Ok(png(img.to_png()))
}

async fn preview_depth(State(ed): State<Arc<Editor>>, Query(q): Query<PreviewQuery>) -> ApiResult<Response> {
    let snap = ed.snapshot();
    let camera = preview_params(&q, &snap.skeleton)?;
    let shape = build_shape(&snap.skeleton, &snap.config).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let depth = tokio::task::spawn_blocking(move || render_depth(&shape, &camera))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(png(depth.to_png16()))
}

async fn export(State(ed): State<Arc<Editor>>) -> Json<serde_json::Value> {
    let st = ed.state.read();
    Json(json!({
        "revision": st.revision,
        "skeleton": st.skeleton.to_document(),
        "config": st.config,
        "mesh": st.mesh.as_ref().map(|m| json!({ "mesh_id": m.id(), "revision": m.revision, "obj": m.obj })),
    }))
}

pub fn router(editor: Arc<Editor>, assets: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/skeleton", get(get_skeleton))
        .route("/api/skeleton/keypoint/{name}", put(put_keypoint))
        .route("/api/skeleton/reset", post(reset_skeleton))
        .route("/api/config", get(get_config).put(put_config))
        .route("/api/mesh", post(post_mesh))
        .route("/api/mesh.obj", get(get_mesh_obj))
        .route("/api/preview/pose", get(preview_pose))
        .route("/api/preview/depth", get(preview_depth))
        .route("/api/export", get(export))
        .with_state(editor);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until interrupted.
pub async fn serve(addr: std::net::SocketAddr, editor: Arc<Editor>, assets: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("editor service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(editor, assets.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
