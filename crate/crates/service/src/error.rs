use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use clinrisk_core::Error as CoreError;
use serde_json::{json, Value};

use crate::SCHEMA_VERSION;

/// Machine-readable error body: `{schema_version, error_code, message, detail}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub error_code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, error_code: &'static str, message: impl Into<String>) -> Self {
        Self { status, error_code, message: message.into(), detail: Value::Null }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn not_loaded() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "engine_not_loaded", "model and cohort are not loaded")
    }

    pub fn patient_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "patient_not_found", format!("no patient with id {id:?}")).with_detail(json!({ "patient_id": id }))
    }

    pub fn scenario_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "scenario_not_found", format!("no scenario with id {id:?}")).with_detail(json!({ "scenario_id": id }))
    }

    pub fn invalid_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_request", message)
    }

    pub fn body(&self) -> Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "error_code": self.error_code,
            "message": self.message,
            "detail": self.detail,
        })
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        match e {
            CoreError::InvalidEdit(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_edit", message),
            CoreError::UnknownCode(code) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_code", message).with_detail(json!({ "code": code }))
            }
            CoreError::InvalidArgument(_) | CoreError::EmptySequence | CoreError::OutOfRange { .. } | CoreError::Shape { .. } => {
                Self::invalid_request(message)
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}
