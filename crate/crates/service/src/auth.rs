use std::sync::Arc;

use axum::extract::FromRequestParts;
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use ctxsql_core::access::{authorize, Action, Decision, Principal};

use crate::{ApiError, AppState};

/// The authenticated caller.
pub struct Auth(pub Principal);

impl Auth {
    pub fn require(&self, action: Action, graph_id: Option<&str>) -> Result<(), ApiError> {
        match authorize(&self.0, action, graph_id) {
            Decision::Allow => Ok(()),
            Decision::Deny(r) => Err(ApiError::forbidden(r)),
        }
    }
}

impl FromRequestParts<Arc<AppState>> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or_else(ApiError::unauthorized)?;
        state.principals.authenticate(token).map(Auth).ok_or_else(ApiError::unauthorized)
    }
}
