use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

/// An HTTP error with a JSON body `{"error": ..., "path": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{status}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    /// Dotted path of the offending request field, if any.
    pub path: Option<String>,
    pub session_status: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            path: None,
            session_status: None,
        }
    }

    pub fn bad_request(path: Option<String>, message: impl Into<String>) -> Self {
        ApiError {
            path,
            ..ApiError::new(StatusCode::BAD_REQUEST, message)
        }
    }

    pub fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }

    pub fn conflict(message: impl Into<String>, session_status: impl Into<String>) -> Self {
        ApiError {
            session_status: Some(session_status.into()),
            ..ApiError::new(StatusCode::CONFLICT, message)
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(p) = self.path {
            body["path"] = p.into();
        }
        if let Some(s) = self.session_status {
            body["status"] = s.into();
        }
        (self.status, Json(body)).into_response()
    }
}
