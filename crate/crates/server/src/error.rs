use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

use lasp_core::api::{ErrorBody, ErrorKind};
use lasp_core::bench::BenchError;
use lasp_core::encoder::RegistryError;
use lasp_core::executor::ExecError;
use lasp_core::expr::ExprError;
use lasp_core::llm::LlmError;
use lasp_core::optimizer::{OptimizeError, SuiteError};
use lasp_core::scene::SceneError;

#[derive(Debug)]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::NotFound,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: message.into(),
        }
    }

    fn status(&self) -> StatusCode {
        match self.kind {
            ErrorKind::Validation => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        let body = ErrorBody {
            kind: self.kind,
            message: self.message,
        };
        (status, Json(body)).into_response()
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for ApiError {
            fn from(e: $t) -> Self {
                ApiError::validation(e.to_string())
            }
        }
    )*};
}

validation_from!(ExprError, SceneError, SuiteError, RegistryError, serde_json::Error);

impl From<ExecError> for ApiError {
    fn from(e: ExecError) -> Self {
        match e {
            // an expression naming a relation without an encoder is bad input
            ExecError::MissingEncoder(_) | ExecError::UnknownTarget { .. } => ApiError::validation(e.to_string()),
            _ => ApiError::runtime(e.to_string()),
        }
    }
}

impl From<BenchError> for ApiError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Exec(inner) => inner.into(),
            BenchError::Io { .. } => ApiError::runtime(e.to_string()),
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::NotConfigured | LlmError::MissingInput { .. } => ApiError::validation(e.to_string()),
            _ => ApiError::runtime(e.to_string()),
        }
    }
}

impl From<OptimizeError> for ApiError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Source { .. } => ApiError::runtime(e.to_string()),
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::runtime(format!("worker task failed: {e}"))
    }
}
