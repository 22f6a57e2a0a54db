use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use ptlabel_core::engine::EngineError;
use ptlabel_core::store::StoreError;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    BadRequest(String),
    Unprocessable(String),
    Conflict { message: String, current_revision: Option<u64> },
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict { .. } => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            ApiError::NotFound(m)
            | ApiError::BadRequest(m)
            | ApiError::Unprocessable(m)
            | ApiError::Internal(m)
            | ApiError::Conflict { message: m, .. } => m,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message() });
        if let ApiError::Conflict { current_revision: Some(r), .. } = &self {
            body["current_revision"] = json!(r);
        }
        (self.status(), Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::UnknownSequence(_) | StoreError::FrameRange { .. } => ApiError::NotFound(message),
            StoreError::Conflict { current, .. } => ApiError::Conflict { message, current_revision: Some(current) },
            StoreError::NoDetections(_) | StoreError::Edit(_) | StoreError::DuplicateSequence(_) => {
                ApiError::Unprocessable(message)
            }
            _ => ApiError::Internal(message),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::UnknownTrack(_) => ApiError::NotFound(e.to_string()),
            EngineError::FrameRange { .. } => ApiError::NotFound(e.to_string()),
            _ => ApiError::Unprocessable(e.to_string()),
        }
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
