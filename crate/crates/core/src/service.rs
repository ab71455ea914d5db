//! HTTP editing service: relighting sessions over OLAT stacks and latent-edit
//! sessions over the trained network, under `/api/v1/`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::envmap::{rotate_env, LatLongEnvMap, LightBasis, LightWeights, TexelBinning};
use crate::error::{Error, Result};
use crate::latent_edit::{ConditionVector, Generator, LatentCode, PhotoAppNet};
use crate::olat::{auto_exposure, relight, CameraPose, Dataset, OlatStack};
use crate::radiometry_io::{read_png, tonemap, write_png, HdrImage};

/// Display gamma for OLAT renders; latent-session images are already display-referred.
const OLAT_GAMMA: f32 = 2.2;

/// Everything a service instance is started with.
pub struct ServiceConfig {
    pub basis: LightBasis,
    pub envmaps: Vec<(String, LatLongEnvMap)>,
    pub generator: Option<Arc<dyn Generator>>,
    pub net: Option<Arc<PhotoAppNet<f32>>>,
}

impl ServiceConfig {
    /// Basis and environment catalog taken from a loaded dataset.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            basis: dataset.basis().clone(),
            envmaps: dataset
                .envmaps()
                .iter()
                .map(|e| (e.id.clone(), (*e.map).clone()))
                .collect(),
            generator: None,
            net: None,
        }
    }
}

struct CatalogEnv {
    id: String,
    map: Arc<LatLongEnvMap>,
    weights: LightWeights,
}

#[derive(Debug, Clone, PartialEq)]
enum EnvChoice {
    Catalog(String),
    Weights(LightWeights),
}

/// Current edit parameters of a session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EditState {
    /// Catalog id, or `None` when explicit light weights are in use.
    pub env: Option<String>,
    pub env_yaw: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub exposure: f64,
    pub p: u8,
    pub q: u8,
}

/// Fields of an edit request; absent fields keep their current value.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditDelta {
    pub env: Option<String>,
    pub env_weights: Option<Vec<f32>>,
    pub env_yaw: Option<f64>,
    pub yaw: Option<f64>,
    pub pitch: Option<f64>,
    pub roll: Option<f64>,
    pub exposure: Option<f64>,
    pub p: Option<u8>,
    pub q: Option<u8>,
}

/// Body of `POST /sessions` for server-side sources. Image uploads are sent
/// as a raw `image/png` body instead.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    OlatStack { dir: String },
    Latent { path: String },
}

enum SessionSource {
    Olat(Arc<OlatStack>),
    Latent(LatentCode),
}

struct Session {
    source: SessionSource,
    env: EnvChoice,
    state: EditState,
    png: Vec<u8>,
}

#[derive(Debug, Serialize)]
pub struct RenderResponse {
    pub session_id: String,
    pub render_url: String,
    pub timing_ms: f64,
    pub state: EditState,
}

#[derive(Debug, Serialize)]
pub struct EnvCatalogEntry {
    pub id: String,
    pub width: usize,
    pub height: usize,
}

/// Shared service state: catalog, models and the session table.
pub struct AppState {
    basis: LightBasis,
    catalog: Vec<CatalogEnv>,
    binnings: Mutex<Vec<Arc<TexelBinning>>>,
    generator: Option<Arc<dyn Generator>>,
    net: Option<Arc<PhotoAppNet<f32>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

/// Failure mapped onto an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Capability(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io { .. }
            | Error::Format(_)
            | Error::Truncated(_)
            | Error::Unsupported(_)
            | Error::Parameter(_)
            | Error::Shape(_)
            | Error::Config(_)
            | Error::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn finite(name: &str, v: f64) -> ApiResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ApiError::bad_request(format!("{name} must be finite")))
    }
}

fn flag(name: &str, v: u8) -> ApiResult<u8> {
    if v <= 1 {
        Ok(v)
    } else {
        Err(ApiError::bad_request(format!("{name} must be 0 or 1")))
    }
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Arc<Self>> {
        let mut binnings: Vec<Arc<TexelBinning>> = Vec::new();
        let mut catalog = Vec::with_capacity(config.envmaps.len());
        for (id, map) in config.envmaps {
            if catalog.iter().any(|c: &CatalogEnv| c.id == id) {
                return Err(Error::Config(format!("duplicate envmap id {id}")));
            }
            let binning = match binnings.iter().find(|b| b.matches(&map, &config.basis)) {
                Some(b) => b.clone(),
                None => {
                    let b = Arc::new(TexelBinning::new(map.width(), map.height(), &config.basis));
                    binnings.push(b.clone());
                    b
                }
            };
            let weights = binning.resample(&map)?;
            catalog.push(CatalogEnv {
                id,
                map: Arc::new(map),
                weights,
            });
        }
        if let Some(net) = &config.net {
            if net.config().env_dim != 3 * config.basis.len() {
                return Err(Error::Config(format!(
                    "network conditions on {} env values, basis has {} lights",
                    net.config().env_dim,
                    config.basis.len()
                )));
            }
            if let Some(g) = &config.generator {
                if g.latent_shape() != (net.config().blocks, net.config().latent_dim) {
                    return Err(Error::Config("network and generator latent shapes differ".into()));
                }
            }
        }
        Ok(Arc::new(Self {
            basis: config.basis,
            catalog,
            binnings: Mutex::new(binnings),
            generator: config.generator,
            net: config.net,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }))
    }

    pub fn envmap_catalog(&self) -> Vec<EnvCatalogEntry> {
        self.catalog
            .iter()
            .map(|c| EnvCatalogEntry {
                id: c.id.clone(),
                width: c.map.width(),
                height: c.map.height(),
            })
            .collect()
    }

    fn binning_for(&self, map: &LatLongEnvMap) -> Arc<TexelBinning> {
        let mut cache = self.binnings.lock().expect("binning cache poisoned");
        if let Some(b) = cache.iter().find(|b| b.matches(map, &self.basis)) {
            return b.clone();
        }
        let b = Arc::new(TexelBinning::new(map.width(), map.height(), &self.basis));
        cache.push(b.clone());
        b
    }

    fn env_weights(&self, choice: &EnvChoice, env_yaw: f64) -> Result<LightWeights> {
        match choice {
            EnvChoice::Weights(w) => Ok(w.clone()),
            EnvChoice::Catalog(id) => {
                let c = self
                    .catalog
                    .iter()
                    .find(|c| &c.id == id)
                    .ok_or_else(|| Error::Parameter(format!("unknown envmap {id}")))?;
                if env_yaw == 0.0 {
                    Ok(c.weights.clone())
                } else {
                    let rotated = rotate_env(&c.map, env_yaw);
                    self.binning_for(&rotated).resample(&rotated)
                }
            }
        }
    }

    fn default_env(&self) -> EnvChoice {
        match self.catalog.first() {
            Some(c) => EnvChoice::Catalog(c.id.clone()),
            None => EnvChoice::Weights(LightWeights::new(vec![1.0; 3 * self.basis.len()]).expect("valid weights")),
        }
    }

    fn render(&self, session: &mut Session) -> Result<()> {
        let weights = self.env_weights(&session.env, session.state.env_yaw)?;
        let exposure = session.state.exposure as f32;
        let ldr = match &session.source {
            SessionSource::Olat(stack) => tonemap(&relight(stack, &weights)?, exposure, OLAT_GAMMA)?,
            SessionSource::Latent(latent) => {
                let (generator, net) = self.models()?;
                let s = &session.state;
                let cond = ConditionVector::new(
                    weights,
                    CameraPose::new(s.yaw, s.pitch, s.roll)?,
                    s.p,
                    net.config().use_q.then_some(s.q),
                )?;
                let edited = net.apply(latent, &cond)?;
                tonemap(&generator.decode(&edited)?, exposure, 1.0)?
            }
        };
        session.png = write_png(&ldr)?;
        Ok(())
    }

    fn models(&self) -> Result<(&Arc<dyn Generator>, &Arc<PhotoAppNet<f32>>)> {
        match (&self.generator, &self.net) {
            (Some(g), Some(n)) => Ok((g, n)),
            _ => Err(Error::Capability("service has no generator and network loaded".into())),
        }
    }

    fn insert(&self, source: SessionSource) -> Result<RenderResponse> {
        let start = Instant::now();
        let mut session = Session {
            source,
            env: self.default_env(),
            state: EditState {
                env: None,
                env_yaw: 0.0,
                yaw: 0.0,
                pitch: 0.0,
                roll: 0.0,
                exposure: 1.0,
                p: 0,
                q: 0,
            },
            png: Vec::new(),
        };
        session.state.env = match &session.env {
            EnvChoice::Catalog(id) => Some(id.clone()),
            EnvChoice::Weights(_) => None,
        };
        if let SessionSource::Olat(stack) = &session.source {
            if stack.light_count() != self.basis.len() {
                return Err(Error::Shape(format!(
                    "stack has {} lights, service basis has {}",
                    stack.light_count(),
                    self.basis.len()
                )));
            }
            // start at an exposure that puts the initial render in range
            let w = self.env_weights(&session.env, 0.0)?;
            session.state.exposure = f64::from(auto_exposure(&relight(stack, &w)?));
        }
        self.render(&mut session)?;
        let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let state = session.state.clone();
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(RenderResponse {
            render_url: format!("/api/v1/sessions/{id}/image"),
            session_id: id,
            timing_ms: start.elapsed().as_secs_f64() * 1e3,
            state,
        })
    }

    /// Opens a relighting session over an in-memory stack.
    pub fn create_olat_session(&self, stack: Arc<OlatStack>) -> Result<RenderResponse> {
        self.insert(SessionSource::Olat(stack))
    }

    /// Opens a latent-edit session from a latent code.
    pub fn create_latent_session(&self, latent: LatentCode) -> Result<RenderResponse> {
        self.models()?;
        self.insert(SessionSource::Latent(latent))
    }

    /// Opens a latent-edit session by projecting an uploaded image.
    pub fn create_image_session(&self, image: &HdrImage) -> Result<RenderResponse> {
        let (generator, _) = self.models()?;
        if !generator.can_encode() {
            return Err(Error::Capability("generator has no encoder".into()));
        }
        self.insert(SessionSource::Latent(generator.encode(image)?))
    }

    fn create_from_spec(&self, spec: SourceSpec) -> Result<RenderResponse> {
        match spec {
            SourceSpec::OlatStack { dir } => {
                let dir = PathBuf::from(dir);
                let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let stack = OlatStack::load_dir(&dir, self.basis.len(), "session", &name, CameraPose::default())?;
                self.create_olat_session(Arc::new(stack))
            }
            SourceSpec::Latent { path } => self.create_latent_session(LatentCode::load(path)?),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}")))
    }

    fn validate_delta(&self, delta: &EditDelta) -> ApiResult<()> {
        if delta.env.is_some() && delta.env_weights.is_some() {
            return Err(ApiError::bad_request("env and env_weights are mutually exclusive"));
        }
        if let Some(id) = &delta.env {
            if !self.catalog.iter().any(|c| &c.id == id) {
                return Err(ApiError::bad_request(format!("unknown envmap {id}")));
            }
        }
        if let Some(w) = &delta.env_weights {
            if w.len() != 3 * self.basis.len() {
                return Err(ApiError::bad_request(format!(
                    "env_weights needs {} values, got {}",
                    3 * self.basis.len(),
                    w.len()
                )));
            }
        }
        for (name, v) in [
            ("env_yaw", delta.env_yaw),
            ("yaw", delta.yaw),
            ("pitch", delta.pitch),
            ("roll", delta.roll),
        ] {
            if let Some(v) = v {
                finite(name, v)?;
            }
        }
        if let Some(e) = delta.exposure {
            if !(finite("exposure", e)? > 0.0) {
                return Err(ApiError::bad_request("exposure must be positive"));
            }
        }
        if let Some(p) = delta.p {
            flag("p", p)?;
        }
        if let Some(q) = delta.q {
            flag("q", q)?;
        }
        Ok(())
    }

    /// Applies a delta to a session and re-renders it. Edits to one session
    /// are serialized by its lock.
    pub fn apply_edit(&self, id: &str, delta: EditDelta) -> ApiResult<RenderResponse> {
        self.validate_delta(&delta)?;
        let session = self.session(id)?;
        let mut s = session.lock().expect("session poisoned");
        let start = Instant::now();
        let mut next = s.state.clone();
        let mut env = s.env.clone();
        if let Some(e) = delta.env {
            next.env = Some(e.clone());
            env = EnvChoice::Catalog(e);
        }
        if let Some(w) = delta.env_weights {
            next.env = None;
            env = EnvChoice::Weights(LightWeights::new(w).map_err(|e| ApiError::bad_request(e.to_string()))?);
        }
        let pose = CameraPose::new(
            delta.yaw.unwrap_or(next.yaw),
            delta.pitch.unwrap_or(next.pitch),
            delta.roll.unwrap_or(next.roll),
        )
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
        (next.yaw, next.pitch, next.roll) = (pose.yaw, pose.pitch, pose.roll);
        next.env_yaw = delta.env_yaw.unwrap_or(next.env_yaw);
        next.exposure = delta.exposure.unwrap_or(next.exposure);
        next.p = delta.p.unwrap_or(next.p);
        next.q = delta.q.unwrap_or(next.q);

        let previous = (s.env.clone(), s.state.clone());
        s.env = env;
        s.state = next;
        if let Err(e) = self.render(&mut s) {
            (s.env, s.state) = previous;
            return Err(e.into());
        }
        Ok(RenderResponse {
            session_id: id.to_string(),
            render_url: format!("/api/v1/sessions/{id}/image"),
            timing_ms: start.elapsed().as_secs_f64() * 1e3,
            state: s.state.clone(),
        })
    }

    /// PNG bytes of the last render.
    pub fn image(&self, id: &str) -> ApiResult<Vec<u8>> {
        Ok(self.session(id)?.lock().expect("session poisoned").png.clone())
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn healthz() -> &'static str {
    "ok"
}

async fn list_envmaps(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "envmaps": app.envmap_catalog() }))
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<RenderResponse>)> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_ascii_lowercase();
    let resp = if content_type.starts_with("image/png") {
        blocking(move || {
            if app.generator.as_ref().is_none_or(|g| !g.can_encode()) || app.net.is_none() {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "image sources need an encoder-capable generator and a network",
                ));
            }
            let img = read_png(&body)?.to_unit_float();
            Ok(app.create_image_session(&img)?)
        })
        .await?
    } else {
        let spec: SourceSpec =
            serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed source: {e}")))?;
        blocking(move || Ok(app.create_from_spec(spec)?)).await?
    };
    Ok((StatusCode::CREATED, Json(resp)))
}

async fn edit_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<RenderResponse>> {
    let delta: EditDelta = if body.iter().all(u8::is_ascii_whitespace) {
        EditDelta::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed edit: {e}")))?
    };
    Ok(Json(blocking(move || app.apply_edit(&id, delta)).await?))
}

async fn session_image(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let png = app.image(&id)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

/// All endpoints, mounted under `/api/v1`.
pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/envmaps", get(list_envmaps))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/edit", post(edit_session))
        .route("/sessions/{id}/image", get(session_image))
        .with_state(state);
    Router::new().nest("/api/v1", api)
}

/// Serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(PathBuf::from(addr.to_string()), e))?;
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io(PathBuf::from(addr.to_string()), e))
}
