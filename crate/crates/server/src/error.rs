use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use intent_canvas::{Error, Stage};
use serde_json::json;

use crate::store::StoreError;

/// Error body: `{"error": {"code", "message", "stage"?}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub stage: Option<Stage>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            stage: None,
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let stage = e.stage();
        let (status, code) = match &e {
            Error::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            Error::NotEnoughData(_) => (StatusCode::UNPROCESSABLE_ENTITY, "not_enough_data"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Graph(_) => (StatusCode::CONFLICT, "graph"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::PoolExhausted(_) => (StatusCode::CONFLICT, "pool_exhausted"),
            Error::Provider { .. } | Error::Pool { .. } => (StatusCode::BAD_GATEWAY, "provider"),
            Error::Embedding { .. } => (StatusCode::BAD_GATEWAY, "embedding"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
            stage,
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        tracing::error!(error = %e, "storage failure");
        Self::internal(format!("storage failure: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({"code": self.code, "message": self.message});
        if let Some(stage) = self.stage {
            error["stage"] = json!(stage);
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}
