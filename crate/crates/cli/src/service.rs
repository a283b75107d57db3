//! HTTP service. The model loads once and is shared read-only; thresholds
//! are per request and only affect decoding, so re-querying is cheap.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path as UrlPath, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tinydet_core::ingest::{Annotation, Frame};
use tinydet_core::metrics::{match_detections, ApMode, GtBox, MatchCriterion, MetricReport, ScoredBox};
use tinydet_core::postprocess::{DetectionRecord, DEFAULT_CONF_THRESHOLD, DEFAULT_NMS_THRESHOLD};
use tinydet_core::tracking::{
    to_trajectories_file, MotilityConfig, MotilityParams, MotilityReport, MotilityThresholds, TrackerConfig, TrajectoriesFile,
};
use tinydet_detector::Detector;

use crate::error::CliError;
use crate::media::{encode_png, frames_from_bytes, media_frames, render_overlay};
use crate::pipeline;
use crate::runs::{digest_path, sha256_hex, RunStore};

/// Uploads up to this size are accepted (videos included).
pub const MAX_UPLOAD_BYTES: usize = 512 << 20;
/// Rendered overlays kept for retrieval; the oldest are dropped first.
const OVERLAY_CACHE: usize = 512;

pub struct AppState {
    pub detector: Arc<Detector>,
    pub model_id: String,
    pub model_path: PathBuf,
    pub runs: RunStore,
    pub default_conf: f64,
    pub default_nms: f64,
    pub tracker: TrackerConfig,
    pub motility: MotilityConfig,
    overlays: Mutex<OverlayCache>,
}

#[derive(Default)]
struct OverlayCache {
    order: Vec<String>,
    png: HashMap<String, Arc<Vec<u8>>>,
}

impl OverlayCache {
    fn insert(&mut self, key: String, png: Vec<u8>) {
        if self.png.contains_key(&key) {
            return;
        }
        if self.order.len() >= OVERLAY_CACHE {
            let old = self.order.remove(0);
            self.png.remove(&old);
        }
        self.order.push(key.clone());
        self.png.insert(key, Arc::new(png));
    }
}

impl AppState {
    pub fn new(detector: Detector, model_path: PathBuf, model_id: String, runs: RunStore) -> Self {
        Self {
            detector: Arc::new(detector),
            model_id,
            model_path,
            runs,
            default_conf: DEFAULT_CONF_THRESHOLD,
            default_nms: DEFAULT_NMS_THRESHOLD,
            tracker: TrackerConfig::default(),
            motility: MotilityConfig::default(),
            overlays: Mutex::new(OverlayCache::default()),
        }
    }

    /// Loads a checkpoint; its id is the file stem plus a digest prefix.
    pub fn load(model_path: &Path, runs: RunStore) -> anyhow::Result<Self> {
        let det = crate::commands::load_model(model_path)?;
        let digest = digest_path(model_path)?;
        let stem = model_path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        Ok(Self::new(det, model_path.to_path_buf(), format!("{stem}-{}", &digest[..12]), runs))
    }
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Runs(m) => ApiError(StatusCode::NOT_FOUND, m),
            other => ApiError::bad(other.to_string()),
        }
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        let (kind, _) = crate::error::classify(&e);
        let status = if kind == "internal" { StatusCode::INTERNAL_SERVER_ERROR } else { StatusCode::BAD_REQUEST };
        ApiError(status, format!("{e:#}"))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/detect", post(detect))
        .route("/track", post(track))
        .route("/eval", post(eval))
        .route("/overlays/{name}", get(overlay))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Usage(format!("cannot listen on {addr}: {e}")))?;
    log::info!("serving {} on http://{}", state.model_id, listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "model": s.model_id }))
}

async fn models(State(s): State<Arc<AppState>>) -> Json<Value> {
    let d = &s.detector;
    Json(json!([{
        "id": s.model_id,
        "path": s.model_path,
        "input_size": d.input_size(),
        "n_classes": d.model.config.n_classes,
        "anchors": d.anchors,
        "n_weights": d.model.n_weights(),
    }]))
}

async fn list_runs(State(s): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let runs = s.runs.list()?;
    Ok(Json(json!(runs.iter().map(|m| json!({ "run_id": m.run_id, "command": m.command, "started_at": m.started_at })).collect::<Vec<_>>())))
}

async fn get_run(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(serde_json::to_value(s.runs.get(&id)?).map_err(anyhow::Error::from)?))
}

async fn overlay(State(s): State<Arc<AppState>>, UrlPath(name): UrlPath<String>) -> Result<Response, ApiError> {
    let key = name.strip_suffix(".png").unwrap_or(&name);
    let png = s.overlays.lock().expect("overlay cache").png.get(key).cloned();
    match png {
        Some(bytes) => Ok(([(header::CONTENT_TYPE, "image/png")], bytes.as_ref().clone()).into_response()),
        None => Err(ApiError(StatusCode::NOT_FOUND, format!("no overlay {name}"))),
    }
}

/// Media plus string-valued options, from multipart or JSON.
struct MediaRequest {
    media: Media,
    fields: HashMap<String, Value>,
}

enum Media {
    Upload { bytes: Bytes, filename: String },
    Path(PathBuf),
}

async fn read_media_request(state: &Arc<AppState>, req: Request) -> Result<MediaRequest, ApiError> {
    let is_multipart = req.headers().get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).is_some_and(|v| v.starts_with("multipart/form-data"));
    if is_multipart {
        let mut mp = Multipart::from_request(req, state).await.map_err(|e| ApiError::bad(e.body_text()))?;
        let mut media = None;
        let mut fields = HashMap::new();
        while let Some(field) = mp.next_field().await.map_err(|e| ApiError::bad(e.body_text()))? {
            let name = field.name().unwrap_or_default().to_string();
            if name == "media" {
                let filename = field.file_name().unwrap_or("upload").to_string();
                let bytes = field.bytes().await.map_err(|e| ApiError::bad(e.body_text()))?;
                media = Some(Media::Upload { bytes, filename });
            } else {
                let text = field.text().await.map_err(|e| ApiError::bad(e.body_text()))?;
                let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
                fields.insert(name, value);
            }
        }
        let media = match (media, fields.remove("path")) {
            (Some(m), _) => m,
            (None, Some(Value::String(p))) => Media::Path(PathBuf::from(p)),
            _ => return Err(ApiError::bad("multipart request needs a `media` file or a `path` field")),
        };
        return Ok(MediaRequest { media, fields });
    }
    let Json(body): Json<serde_json::Map<String, Value>> = Json::from_request(req, state).await.map_err(|e| ApiError::bad(e.body_text()))?;
    let mut fields: HashMap<String, Value> = body.into_iter().collect();
    match fields.remove("path") {
        Some(Value::String(p)) => Ok(MediaRequest { media: Media::Path(PathBuf::from(p)), fields }),
        _ => Err(ApiError::bad("JSON request needs a string `path`")),
    }
}

impl MediaRequest {
    fn number(&self, key: &str) -> Result<Option<f64>, ApiError> {
        match self.fields.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(Value::String(s)) => s.trim().parse().map(Some).map_err(|_| ApiError::bad(format!("{key} must be a number, got {s:?}"))),
            Some(v) => Err(ApiError::bad(format!("{key} must be a number, got {v}"))),
        }
    }

    fn threshold(&self, key: &str, default: f64) -> Result<f64, ApiError> {
        let v = self.number(key)?.unwrap_or(default);
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(ApiError::bad(format!("{key} {v} outside [0, 1]")))
        }
    }

    /// Decoded frames and a digest of the media bytes.
    fn frames(&self) -> Result<(Vec<Frame>, String), ApiError> {
        match &self.media {
            Media::Upload { bytes, filename } => Ok((frames_from_bytes(bytes, filename)?, sha256_hex(bytes))),
            Media::Path(p) => {
                let frames = media_frames(p)?;
                Ok((frames, digest_path(p)?))
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FrameDetections {
    pub source_id: String,
    pub frame: usize,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<DetectionRecord>,
    /// Server-rendered overlay, fetched with GET.
    pub overlay: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DetectResponse {
    pub model: String,
    pub media_digest: String,
    pub conf: f64,
    pub nms_iou: f64,
    pub count: usize,
    pub frames: Vec<FrameDetections>,
}

fn overlay_key(model: &str, digest: &str, frame: &Frame, conf: f64, nms: f64) -> String {
    let text = format!("{model}\n{digest}\n{}\n{}\n{conf:?}\n{nms:?}", frame.source_id, frame.index);
    sha256_hex(text.as_bytes())[..32].to_string()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn detect(State(s): State<Arc<AppState>>, req: Request) -> Result<Json<DetectResponse>, ApiError> {
    let mr = read_media_request(&s, req).await?;
    let conf = mr.threshold("conf", s.default_conf)?;
    let nms = mr.threshold("nms_iou", s.default_nms)?;
    let state = s.clone();
    let resp = blocking(move || {
        let (frames, digest) = mr.frames()?;
        let mut out = Vec::with_capacity(frames.len());
        let mut rendered = Vec::with_capacity(frames.len());
        for f in &frames {
            let records = pipeline::detect_frame(&state.detector, f, conf, nms)?;
            let key = overlay_key(&state.model_id, &digest, f, conf, nms);
            rendered.push((key.clone(), encode_png(&render_overlay(&f.image, &records))));
            out.push(FrameDetections {
                source_id: f.source_id.clone(),
                frame: f.index,
                width: f.image.width(),
                height: f.image.height(),
                detections: records,
                overlay: format!("/overlays/{key}.png"),
            });
        }
        let mut cache = state.overlays.lock().expect("overlay cache");
        for (k, png) in rendered {
            cache.insert(k, png);
        }
        let count = out.iter().map(|f| f.detections.len()).sum();
        Ok(DetectResponse { model: state.model_id.clone(), media_digest: digest, conf, nms_iou: nms, count, frames: out })
    })
    .await?;
    Ok(Json(resp))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SourceTrackResponse {
    pub trajectories: TrajectoriesFile,
    pub motility: MotilityReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrackResponse {
    pub model: String,
    pub media_digest: String,
    pub conf: f64,
    pub nms_iou: f64,
    pub tracker: TrackerConfig,
    pub motility_config: MotilityConfig,
    pub sources: BTreeMap<String, SourceTrackResponse>,
}

async fn track(State(s): State<Arc<AppState>>, req: Request) -> Result<Json<TrackResponse>, ApiError> {
    let mr = read_media_request(&s, req).await?;
    let conf = mr.threshold("conf", s.default_conf)?;
    let nms = mr.threshold("nms_iou", s.default_nms)?;
    let tracker = TrackerConfig {
        gate_px: mr.number("gate_px")?.unwrap_or(s.tracker.gate_px),
        max_gap: mr.number("max_gap")?.map(|v| v as usize).unwrap_or(s.tracker.max_gap),
    };
    let p = s.motility.params;
    let motility = MotilityConfig {
        params: MotilityParams {
            fps: mr.number("fps")?.unwrap_or(p.fps),
            um_per_px: mr.number("um_per_px")?.or(p.um_per_px),
            smooth_window: mr.number("smooth_window")?.map(|v| v as usize).unwrap_or(p.smooth_window),
        },
        thresholds: MotilityThresholds { vap_min: mr.number("vap_min")?.unwrap_or(s.motility.thresholds.vap_min), ..s.motility.thresholds },
        pr_class: s.motility.pr_class,
    };
    let state = s.clone();
    let resp = blocking(move || {
        let (frames, digest) = mr.frames()?;
        let records = pipeline::detect_frames(&state.detector, &frames, conf, nms)?;
        let tracks = pipeline::track(&records, &tracker, &motility)?;
        let sources = tracks
            .into_iter()
            .map(|(k, t)| (k, SourceTrackResponse { trajectories: to_trajectories_file(&t.trajectories), motility: t.motility }))
            .collect();
        Ok(TrackResponse { model: state.model_id.clone(), media_digest: digest, conf, nms_iou: nms, tracker, motility_config: motility, sources })
    })
    .await?;
    Ok(Json(resp))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalRequest {
    pub detections: Vec<DetectionRecord>,
    pub ground_truth: Vec<Annotation>,
    #[serde(default)]
    pub criterion: Option<MatchCriterion>,
    #[serde(default)]
    pub conf: Option<f64>,
    #[serde(default)]
    pub ap_literal: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FrameCounts {
    pub source_id: String,
    pub frame: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalResponse {
    pub report: MetricReport,
    /// TP/FP/FN per frame among detections at or above `conf`.
    pub frames: Vec<FrameCounts>,
}

/// The evaluation behind `POST /eval`: the same report `tinydet eval` writes,
/// plus per-frame counts for colouring.
pub fn evaluate_request(req: &EvalRequest, default_conf: f64) -> anyhow::Result<EvalResponse> {
    let criterion = req.criterion.unwrap_or_default();
    let conf = req.conf.unwrap_or(default_conf);
    let mode = if req.ap_literal { ApMode::LiteralCumulative } else { ApMode::Indicator };
    let report = pipeline::evaluate(&req.detections, &req.ground_truth, &criterion, conf, mode)?;
    let frames = tinydet_core::metrics::group_by_frame(&req.detections, &req.ground_truth)
        .into_iter()
        .map(|(r, f)| {
            let dets: Vec<ScoredBox> = f.dets.into_iter().filter(|d| d.confidence >= conf).collect();
            let gts: Vec<GtBox> = f.gts;
            let m = match_detections(&dets, &gts, &criterion);
            FrameCounts { source_id: r.source_id, frame: r.index, tp: m.tp(), fp: m.fp(), fn_count: m.fn_count() }
        })
        .collect();
    Ok(EvalResponse { report, frames })
}

async fn eval(State(s): State<Arc<AppState>>, Json(req): Json<EvalRequest>) -> Result<Json<EvalResponse>, ApiError> {
    let conf = s.default_conf;
    Ok(Json(blocking(move || Ok(evaluate_request(&req, conf)?)).await?))
}
