use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use ctxsql_core::access::DenyReason;
use ctxsql_core::planner::{PlanError, StageFailure};
use ctxsql_core::store::StoreError;
use serde_json::{json, Value};

/// JSON error response: `{"error": <code>, "message": ..., ...extra}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: json!({ "error": code, "message": message.into() }) }
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token")
    }

    pub fn forbidden(reason: DenyReason) -> Self {
        let mut e = Self::new(StatusCode::FORBIDDEN, "forbidden", "action not permitted");
        e.body["reason"] = json!(reason);
        e
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    /// Stage-tagged planner failure; alternatives are lifted to the top
    /// level so clients can offer them without digging.
    pub fn planner(f: &StageFailure, audit_id: &str) -> Self {
        let alternatives = match &f.error {
            PlanError::UngroundedPhrase { alternatives, .. } => json!(alternatives),
            _ => json!([]),
        };
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({
                "error": "planner",
                "stage": f.stage,
                "kind": f.error.kind(),
                "message": f.error.to_string(),
                "detail": f.error,
                "alternatives": alternatives,
                "audit_id": audit_id,
            }),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(m) => ApiError::not_found(m),
            StoreError::NotNegative(_) | StoreError::Invalid(_) => ApiError::unprocessable(e.to_string()),
            StoreError::StorageFailure(m) => ApiError::internal(m),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
