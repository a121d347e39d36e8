use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use deepcat_harness::HarnessError;
use serde::{Deserialize, Serialize};

/// Wire format of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        let msg = e.to_string();
        match e {
            HarnessError::UnknownSelector(_) => Self::bad_request("unknown_selector", msg),
            HarnessError::PolicyNotLoaded => Self::conflict("policy_not_loaded", msg),
            HarnessError::InvalidConfig(_) => Self::bad_request("invalid_config", msg),
            HarnessError::SessionFinished => Self::new(StatusCode::GONE, "session_terminated", msg),
            HarnessError::UnexpectedItem { .. } => Self::conflict("item_mismatch", msg),
            HarnessError::Core(_) | HarnessError::Rl(_) => Self::bad_request("invalid_request", msg),
            HarnessError::Io(_) | HarnessError::Json(_) | HarnessError::Csv(_) => Self::internal(msg),
        }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::internal(format!("storage: {e}"))
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        Self::internal(format!("serialization: {e}"))
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
