use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use serde_json::{json, Value};
use uvmakeup_core::Error;

/// Structured error body: `{category, message, detail}`.
#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub category: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, category: &str, message: impl Into<String>) -> Self {
        Self { status, category: category.into(), message: message.into(), detail: Value::Null }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid-input", message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", format!("unknown {what} `{id}`"))
            .with_detail(json!({ "kind": what, "id": id }))
    }

    pub fn models_unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "model-missing", "models are not loaded")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Geometry { .. } | Error::GeometryMismatch(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::ModelMissing(_) | Error::Uninitialized(_) => StatusCode::SERVICE_UNAVAILABLE,
            Error::Shape(_) | Error::InvalidParam(_) | Error::Image(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let detail = match &e {
            Error::Geometry { role, source } => json!({ "input": role, "reason": source.to_string() }),
            Error::ModelMissing(model) => json!({ "model": model }),
            _ => Value::Null,
        };
        Self::new(status, e.category(), e.to_string()).with_detail(detail)
    }
}

impl From<axum::extract::multipart::MultipartError> for ApiError {
    fn from(e: axum::extract::multipart::MultipartError) -> Self {
        let status = e.status();
        let category = if status == StatusCode::PAYLOAD_TOO_LARGE { "payload-too-large" } else { "invalid-input" };
        Self::new(status, category, e.body_text())
    }
}

impl From<axum::extract::multipart::MultipartRejection> for ApiError {
    fn from(e: axum::extract::multipart::MultipartRejection) -> Self {
        Self::new(e.status(), "invalid-input", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}
