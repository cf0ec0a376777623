//! HTTP surface of the plane.
//!
//! Six endpoints over one shared [`StatePlane`]: the two hot-path calls,
//! the decay sweep, user-scope deletion, single object lookup, and audit
//! chain verification. Callers authenticate with a bearer token that the
//! server maps to a [`Principal`]; every request is evaluated under the
//! loaded policy and audited.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::governance::{PolicyRule, PolicySet, Principal};
use crate::model::StatePlaneConfig;
use crate::service::{
    CommitOutcomeRequest, PrepareContextRequest, ServiceError, StatePlane,
};

/// On-disk server configuration. The policy may be inline or a path to a
/// JSON array of rules; credentials map bearer tokens to principals.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub plane: StatePlaneConfig,
    pub policy: Option<Vec<PolicyRule>>,
    pub policy_path: Option<PathBuf>,
    pub credentials: BTreeMap<String, Principal>,
}

impl ServerConfig {
    pub fn load(path: &Path) -> std::io::Result<ServerConfig> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    pub fn resolve_policy(&self) -> std::io::Result<PolicySet> {
        if let Some(rules) = &self.policy {
            return Ok(PolicySet::new(rules.clone()));
        }
        if let Some(path) = &self.policy_path {
            return PolicySet::load(path);
        }
        Ok(PolicySet::default())
    }
}

#[derive(Clone)]
pub struct AppState {
    pub plane: Arc<Mutex<StatePlane>>,
    pub credentials: Arc<BTreeMap<String, Principal>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit_event_id: Option<String>,
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error_code: code.to_string(),
                message: message.into(),
                audit_event_id: None,
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> ApiError {
        let message = e.to_string();
        match e {
            ServiceError::PolicyDenied { audit_event_id, .. } => ApiError {
                status: StatusCode::FORBIDDEN,
                body: ErrorBody {
                    error_code: "policy_denied".into(),
                    message,
                    audit_event_id,
                },
            },
            ServiceError::GateRejected { audit_event_id, .. } => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: ErrorBody {
                    error_code: "write_gate_rejected".into(),
                    message,
                    audit_event_id,
                },
            },
            ServiceError::BudgetExhausted => ApiError::new(
                StatusCode::INSUFFICIENT_STORAGE,
                "budget_exhausted",
                message,
            ),
            ServiceError::InvalidRequest(_) | ServiceError::NonUserScope(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", message)
            }
            ServiceError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", message),
            ServiceError::Audit(_) => ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "audit_unavailable",
                message,
            ),
            ServiceError::Store(_) | ServiceError::Promote(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

fn authenticate(state: &AppState, headers: &HeaderMap) -> Result<Principal, ApiError> {
    let token = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| {
            ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing bearer token")
        })?;
    state
        .credentials
        .get(token)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "unknown token"))
}

async fn prepare_context(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<PrepareContextRequest>,
) -> Result<Response, ApiError> {
    let caller = authenticate(&state, &headers)?;
    let mut plane = state.plane.lock().unwrap();
    let resp = plane.prepare_context(&caller, &req)?;
    Ok(Json(resp).into_response())
}

async fn commit_outcome(
    State(state): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<CommitOutcomeRequest>,
) -> Result<Response, ApiError> {
    let caller = authenticate(&state, &headers)?;
    let mut plane = state.plane.lock().unwrap();
    let resp = plane.commit_outcome(&caller, &req)?;
    Ok(Json(resp).into_response())
}

async fn decay_sweep(
    State(state): State<AppState>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let caller = authenticate(&state, &headers)?;
    let mut plane = state.plane.lock().unwrap();
    let report = plane.decay_sweep(&caller)?;
    Ok(Json(report).into_response())
}

async fn forget_scope(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(scope): UrlPath<String>,
) -> Result<Response, ApiError> {
    let caller = authenticate(&state, &headers)?;
    let mut plane = state.plane.lock().unwrap();
    let resp = plane.forget_scope(&caller, &scope)?;
    Ok(Json(resp).into_response())
}

async fn get_state(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let caller = authenticate(&state, &headers)?;
    let mut plane = state.plane.lock().unwrap();
    let obj = plane.get_state(&caller, &id)?;
    Ok(Json(obj).into_response())
}

async fn audit_verify(State(state): State<AppState>) -> Result<Response, ApiError> {
    let plane = state.plane.lock().unwrap();
    Ok(Json(plane.verify_audit()).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/prepare_context", post(prepare_context))
        .route("/v1/commit_outcome", post(commit_outcome))
        .route("/v1/admin/decay_sweep", post(decay_sweep))
        .route("/v1/scope/*scope", delete(forget_scope))
        .route("/v1/state/:id", get(get_state))
        .route("/v1/audit/verify", get(audit_verify))
        .with_state(state)
}

/// Opens the plane under `store_dir` and serves until the process exits.
pub async fn serve(
    config: ServerConfig,
    store_dir: &Path,
    port: u16,
) -> Result<(), Box<dyn std::error::Error>> {
    let policy = config.resolve_policy()?;
    let plane = StatePlane::open(store_dir, config.plane.clone(), policy)?;
    let state = AppState {
        plane: Arc::new(Mutex::new(plane)),
        credentials: Arc::new(config.credentials),
    };
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    axum::serve(listener, router(state)).await?;
    Ok(())
}
