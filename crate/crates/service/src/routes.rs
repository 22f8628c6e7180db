use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use base64::Engine;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use uvmakeup_core::fusion::{PatternSource, RegionSelection, TransferRequest};
use uvmakeup_core::pipeline::{Pipeline, PreparedFace};
use uvmakeup_core::{FaceRole, Image};

use crate::error::ApiError;
use crate::results::StoredResult;
use crate::AppState;

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/styles", get(list_styles).post(add_style))
        .route("/api/styles/{id}/thumbnail", get(style_thumbnail))
        .route("/api/styles/{id}/reference", get(style_reference))
        .route("/api/transfer", axum::routing::post(transfer))
        .route("/api/result/{id}", get(result_meta))
        .route("/api/result/{id}/{artifact}", get(result_artifact))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn png(bytes: Vec<u8>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "image/png")], bytes)
}

fn ready(state: &AppState) -> Result<Arc<Pipeline>, ApiError> {
    state.pipeline().cloned().ok_or_else(ApiError::models_unavailable)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let p = state.pipeline();
    Json(json!({
        "ready": p.is_some(),
        "color": p.is_some_and(|p| p.has_color()),
        "pattern": p.is_some_and(|p| p.has_pattern()),
        "styles": state.styles().len(),
    }))
}

async fn list_styles(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!(state.styles().list()))
}

/// Multipart fields collected by name; later duplicates win.
async fn read_fields(mp: Result<Multipart, MultipartRejection>) -> Result<BTreeMap<String, Vec<u8>>, ApiError> {
    let mut mp = mp?;
    let mut fields = BTreeMap::new();
    while let Some(field) = mp.next_field().await? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await?;
        fields.insert(name, bytes.to_vec());
    }
    Ok(fields)
}

fn decode(name: &str, bytes: &[u8]) -> Result<Image, ApiError> {
    Image::decode_png(bytes).map_err(|e| ApiError::bad_request(format!("field `{name}` is not a PNG image: {e}")))
}

async fn add_style(
    State(state): State<Arc<AppState>>,
    mp: Result<Multipart, MultipartRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let mut fields = read_fields(mp).await?;
    let bytes = fields.remove("image").ok_or_else(|| ApiError::bad_request("missing multipart field `image`"))?;
    let pipeline = ready(&state)?;
    let info = blocking(move || {
        let image = decode("image", &bytes)?;
        let face = pipeline.prepare_reference(&image, FaceRole::Style)?;
        Ok(state.styles_mut().insert(bytes, image, face)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn style_thumbnail(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let styles = state.styles();
    let entry = styles.get(&id).ok_or_else(|| ApiError::not_found("style", &id))?;
    Ok(png(entry.thumbnail_png.clone()))
}

async fn style_reference(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let styles = state.styles();
    let entry = styles.get(&id).ok_or_else(|| ApiError::not_found("style", &id))?;
    Ok(png(entry.reference_png.clone()))
}

/// Parsed `/api/transfer` form.
///
/// Fields: `source` (PNG, required); `style` (library id) or `reference`
/// (PNG); optionally `style2` or `reference2`; `alpha` (default 1);
/// `regions` (`lips,eyes,skin` or `full`, default full); `use_color` and
/// `use_pattern` (default true); `pattern_source` (`first` or `second`);
/// `seed` (default 0).
#[derive(Debug)]
pub struct TransferForm {
    pub source: Vec<u8>,
    pub references: Vec<ReferenceInput>,
    pub request: TransferRequest,
}

#[derive(Debug)]
pub enum ReferenceInput {
    Style(String),
    Upload(Vec<u8>),
}

impl ReferenceInput {
    fn key(&self) -> String {
        match self {
            ReferenceInput::Style(id) => format!("style:{id}"),
            ReferenceInput::Upload(b) => format!("upload:{}", &hex::encode(Sha256::digest(b))[..16]),
        }
    }
}

fn text(fields: &BTreeMap<String, Vec<u8>>, name: &str) -> Result<Option<String>, ApiError> {
    fields
        .get(name)
        .map(|b| {
            String::from_utf8(b.clone())
                .map(|s| s.trim().to_string())
                .map_err(|_| ApiError::bad_request(format!("field `{name}` is not UTF-8 text")))
        })
        .transpose()
}

fn flag(fields: &BTreeMap<String, Vec<u8>>, name: &str, default: bool) -> Result<bool, ApiError> {
    match text(fields, name)?.as_deref() {
        None => Ok(default),
        Some("true" | "1" | "on" | "yes") => Ok(true),
        Some("false" | "0" | "off" | "no") => Ok(false),
        Some(v) => Err(ApiError::bad_request(format!("field `{name}` must be a boolean, got `{v}`"))),
    }
}

impl TransferForm {
    pub fn parse(mut fields: BTreeMap<String, Vec<u8>>) -> Result<Self, ApiError> {
        let mut request = TransferRequest {
            use_color: flag(&fields, "use_color", true)?,
            use_pattern: flag(&fields, "use_pattern", true)?,
            ..Default::default()
        };
        if let Some(a) = text(&fields, "alpha")? {
            request.alpha = a.parse().map_err(|_| ApiError::bad_request(format!("alpha `{a}` is not a number")))?;
        }
        if let Some(r) = text(&fields, "regions")? {
            request.regions = RegionSelection::parse(&r)?;
        }
        if let Some(p) = text(&fields, "pattern_source")? {
            request.pattern_source = match p.as_str() {
                "first" => PatternSource::First,
                "second" => PatternSource::Second,
                _ => {
                    return Err(ApiError::bad_request(format!("pattern_source must be `first` or `second`, got `{p}`")))
                }
            };
        }
        if let Some(s) = text(&fields, "seed")? {
            request.seed = s.parse().map_err(|_| ApiError::bad_request(format!("seed `{s}` is not an integer")))?;
        }
        request.validate()?;

        let mut references = Vec::new();
        for (style, upload) in [("style", "reference"), ("style2", "reference2")] {
            match (text(&fields, style)?, fields.remove(upload)) {
                (Some(_), Some(_)) => {
                    return Err(ApiError::bad_request(format!("give either `{style}` or `{upload}`, not both")))
                }
                (Some(id), None) => references.push(ReferenceInput::Style(id)),
                (None, Some(bytes)) => references.push(ReferenceInput::Upload(bytes)),
                (None, None) => {}
            }
            if references.is_empty() {
                return Err(ApiError::bad_request("a `style` id or a `reference` image is required"));
            }
        }
        let source =
            fields.remove("source").ok_or_else(|| ApiError::bad_request("missing multipart field `source`"))?;
        Ok(Self { source, references, request })
    }

    /// Content hash of everything that determines the output.
    pub fn request_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(Sha256::digest(&self.source));
        for r in &self.references {
            h.update(r.key().as_bytes());
            h.update([0]);
        }
        h.update(serde_json::to_vec(&self.request).expect("request serializes"));
        hex::encode(h.finalize())[..16].to_string()
    }
}

fn run_transfer(state: &AppState, pipeline: &Pipeline, form: TransferForm) -> Result<StoredResult, ApiError> {
    let id = form.request_id();
    let source = decode("source", &form.source)?;
    let src = pipeline.unwrap_face(&source, FaceRole::Source)?;
    let mut refs: Vec<PreparedFace> = Vec::with_capacity(form.references.len());
    for (i, r) in form.references.iter().enumerate() {
        let role = if i == 0 { FaceRole::Reference } else { FaceRole::Reference2 };
        refs.push(match r {
            ReferenceInput::Style(sid) => {
                state.styles().get(sid).ok_or_else(|| ApiError::not_found("style", sid))?.face.clone()
            }
            ReferenceInput::Upload(bytes) => pipeline.prepare_reference(&decode("reference", bytes)?, role)?,
        });
    }
    let res = pipeline.transfer_prepared(&source, &src, &refs, &form.request)?;
    let keys = form.references.iter().map(ReferenceInput::key).collect();
    Ok(StoredResult::new(id, keys, &res)?)
}

async fn transfer(
    State(state): State<Arc<AppState>>,
    mp: Result<Multipart, MultipartRejection>,
) -> Result<Json<Value>, ApiError> {
    let form = TransferForm::parse(read_fields(mp).await?)?;
    let pipeline = ready(&state)?;
    let st = Arc::clone(&state);
    let stored = blocking(move || run_transfer(&st, &pipeline, form)).await?;
    let stored = state.results().insert(stored);
    let image = base64::engine::general_purpose::STANDARD.encode(&stored.artifacts["output"]);
    Ok(Json(json!({
        "id": stored.id,
        "image": image,
        "pattern_empty": stored.pattern_empty,
        "timings": stored.timings,
        "references": stored.references,
        "artifacts": stored.artifact_names(),
    })))
}

async fn result_meta(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let r = state.results().get(&id).ok_or_else(|| ApiError::not_found("result", &id))?;
    let mut doc = serde_json::to_value(&*r).map_err(|e| ApiError::internal(e.to_string()))?;
    doc["artifacts"] = json!(r.artifact_names());
    Ok(Json(doc))
}

async fn result_artifact(
    State(state): State<Arc<AppState>>,
    Path((id, artifact)): Path<(String, String)>,
) -> Result<impl IntoResponse, ApiError> {
    let r = state.results().get(&id).ok_or_else(|| ApiError::not_found("result", &id))?;
    let name = artifact.strip_suffix(".png").unwrap_or(&artifact);
    let bytes = r.artifacts.get(name).ok_or_else(|| ApiError::not_found("artifact", name))?;
    Ok(png(bytes.clone()))
}
