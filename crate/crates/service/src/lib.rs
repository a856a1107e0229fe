//! Local HTTP service for browsing phantom cases and running
//! prompt-conditioned synthesis against a single loaded checkpoint.
//!
//! Endpoints:
//!
//! * `GET /api/cases` lists `{id, split, resolution}` sorted by id.
//! * `GET /api/cases/{id}/images` returns x1, x2, y and the lesion mask as
//!   base64 grayscale PNGs together with the intensity window.
//! * `POST /api/synthesize` runs the generator on one case. The `prompt`
//!   field is absent (no prompt), the string `"lesion"` (the stored lesion
//!   mask) or an RLE mask `{height, width, runs}` as described in [`rle`].
//!
//! Synthesis requests are executed one at a time against the model.

pub mod imaging;
pub mod rle;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tlp_core::dataset::Dataset;
use tlp_core::fpg::Mask;
use tlp_core::inference::{split_name, synthesize_case};
use tlp_core::metrics::{case_metrics, CaseMetrics};
use tlp_core::model::checkpoint::file_sha256;
use tlp_core::model::{Checkpoint, GeneratorState};
use tlp_core::Error as CoreError;
use tower_http::cors::CorsLayer;

use crate::imaging::{image_png_b64, mask_png_b64, stats, Stats, Window, WINDOW};
use crate::rle::RleMask;

/// The generator plus what is needed to attribute its outputs.
pub struct LoadedModel {
    pub generator: GeneratorState,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub checkpoint: String,
    pub checkpoint_sha256: String,
    pub seed: Option<u64>,
    pub epoch: Option<u64>,
}

impl LoadedModel {
    pub fn load(path: &Path) -> tlp_core::Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let provenance = Provenance {
            checkpoint: path.display().to_string(),
            checkpoint_sha256: file_sha256(path)?,
            seed: ckpt.meta.pointer("/train/seed").and_then(Value::as_u64),
            epoch: ckpt.meta.get("epoch").and_then(Value::as_u64),
        };
        Ok(Self { generator: ckpt.generator, provenance })
    }
}

pub struct AppState {
    data: PathBuf,
    model: Option<Mutex<LoadedModel>>,
}

impl AppState {
    pub fn new(data: impl Into<PathBuf>, model: Option<LoadedModel>) -> Self {
        Self { data: data.into(), model: model.map(Mutex::new) }
    }

    /// The manifest is re-read per request so edits or corruption on disk
    /// surface immediately rather than at startup.
    fn dataset(&self) -> Result<Dataset, ApiError> {
        Dataset::open(&self.data).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("dataset unavailable: {e}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "status": self.status.as_u16() }))).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CaseEntry {
    pub id: String,
    pub split: String,
    pub resolution: usize,
}

#[derive(Debug, Serialize)]
pub struct EncodedImage {
    pub png: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Serialize)]
pub struct CaseImages {
    pub id: String,
    pub window: Window,
    pub x1: EncodedImage,
    pub x2: EncodedImage,
    pub y: EncodedImage,
    pub lesion: EncodedImage,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum PromptSpec {
    Token(String),
    Mask(RleMask),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisRequest {
    pub case_id: String,
    #[serde(default)]
    pub prompt: Option<PromptSpec>,
    #[serde(default)]
    pub return_metrics: bool,
}

#[derive(Debug, Serialize)]
pub struct SynthesizedImage {
    pub png: String,
    pub height: usize,
    pub width: usize,
    pub window: Window,
    #[serde(flatten)]
    pub stats: Stats,
}

#[derive(Debug, Serialize)]
pub struct SynthesisResponse {
    pub case_id: String,
    pub prompt: String,
    pub prompt_pixels: usize,
    pub y_hat: SynthesizedImage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<CaseMetrics>,
    pub model: Provenance,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/cases", get(list_cases))
        .route("/api/cases/:id/images", get(case_images))
        .route("/api/synthesize", post(synthesize))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn list_cases(State(state): State<Arc<AppState>>) -> Result<Json<Vec<CaseEntry>>, ApiError> {
    let ds = state.dataset()?;
    let resolution = ds.manifest.spec.resolution;
    let cases = ds
        .all_ids()
        .into_iter()
        .map(|id| {
            let split = ds.split_of(&id).map(split_name).unwrap_or("unknown").to_string();
            CaseEntry { id, split, resolution }
        })
        .collect();
    Ok(Json(cases))
}

fn encoded(img: &tlp_core::Tensor) -> EncodedImage {
    let s = img.shape();
    EncodedImage { png: image_png_b64(img), height: s[s.len() - 2], width: s[s.len() - 1] }
}

async fn case_images(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<CaseImages>, ApiError> {
    let ds = state.dataset()?;
    if !ds.contains(&id) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown case id {id}")));
    }
    let case = ds.case(&id).map_err(ApiError::internal)?;
    let lesion = EncodedImage { png: mask_png_b64(&case.lesion), height: case.lesion.height(), width: case.lesion.width() };
    Ok(Json(CaseImages { id, window: WINDOW, x1: encoded(&case.x1), x2: encoded(&case.x2), y: encoded(&case.y), lesion }))
}

async fn synthesize(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SynthesisRequest>, JsonRejection>,
) -> Result<Json<SynthesisResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    if state.model.is_none() {
        return Err(ApiError::new(StatusCode::CONFLICT, "no checkpoint loaded"));
    }
    let ds = state.dataset()?;
    if !ds.contains(&req.case_id) {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown case id {}", req.case_id)));
    }
    let state = state.clone();
    tokio::task::spawn_blocking(move || run_synthesis(&state, &ds, req))
        .await
        .map_err(ApiError::internal)?
        .map(Json)
}

fn resolve_prompt(spec: &Option<PromptSpec>, lesion: &Mask) -> Result<(String, Option<Mask>), ApiError> {
    let bad = |m: String| ApiError::new(StatusCode::BAD_REQUEST, m);
    match spec {
        None => Ok(("none".into(), None)),
        Some(PromptSpec::Token(t)) if t == "lesion" => Ok(("lesion".into(), Some(lesion.clone()))),
        Some(PromptSpec::Token(t)) => Err(bad(format!("unknown prompt token {t:?}"))),
        Some(PromptSpec::Mask(r)) => {
            let mask = rle::decode(r).map_err(|e| bad(format!("malformed mask: {e}")))?;
            if (mask.height(), mask.width()) != (lesion.height(), lesion.width()) {
                return Err(bad(format!(
                    "mask is {}x{} but the case is {}x{}",
                    mask.height(),
                    mask.width(),
                    lesion.height(),
                    lesion.width()
                )));
            }
            Ok(("mask".into(), Some(mask)))
        }
    }
}

fn run_synthesis(state: &AppState, ds: &Dataset, req: SynthesisRequest) -> Result<SynthesisResponse, ApiError> {
    let case = ds.case(&req.case_id).map_err(|e| match e {
        CoreError::UnknownCase(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        e => ApiError::internal(e),
    })?;
    let (label, prompt) = resolve_prompt(&req.prompt, &case.lesion)?;
    let model = state.model.as_ref().expect("checked by the handler");
    let model = model.lock().unwrap_or_else(|p| p.into_inner());
    let y_hat = synthesize_case(&model.generator, &case, prompt.as_ref()).map_err(ApiError::internal)?;
    let metrics = if req.return_metrics {
        Some(case_metrics(&case.id, &y_hat, &case.y, Some(&case.lesion)).map_err(ApiError::internal)?)
    } else {
        None
    };
    let enc = encoded(&y_hat);
    Ok(SynthesisResponse {
        case_id: case.id,
        prompt: label,
        prompt_pixels: prompt.as_ref().map_or(0, Mask::count),
        y_hat: SynthesizedImage { png: enc.png, height: enc.height, width: enc.width, window: WINDOW, stats: stats(&y_hat) },
        metrics,
        model: model.provenance.clone(),
    })
}

/// Serves on `listener` until the process receives Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
