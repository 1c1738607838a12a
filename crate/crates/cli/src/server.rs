//! HTTP front for the survey service. JSON in and out, except the CSV export.
//!
//! ```text
//! POST /admin/sessions         NewSession        -> 201 SessionInfo
//! GET  /admin/sessions                           -> [SessionInfo]
//! GET  /admin/export                             -> text/csv
//! GET  /session/{id}                             -> SessionInfo
//! GET  /session/{id}/next                        -> ItemView
//! POST /session/{id}/response  ResponseBody      -> Ack
//! ```

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use storymoral_core::survey::{NewSession, SurveyService};
use storymoral_core::Error;

pub const ADMIN_TOKEN_HEADER: &str = "x-admin-token";

#[derive(Clone)]
struct AppState {
    service: Arc<SurveyService>,
    admin_token: Option<Arc<str>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseBody {
    pub entry_id: String,
    pub choice: String,
    #[serde(default)]
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, msg: impl Into<String>) -> Self {
        ApiError(
            status,
            ErrorBody {
                error: msg.into(),
                code: code.into(),
            },
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            Error::UnknownItem { .. } => (StatusCode::NOT_FOUND, "unknown_item"),
            Error::SessionComplete(_) => (StatusCode::CONFLICT, "session_complete"),
            Error::SessionClosed(_) => (StatusCode::CONFLICT, "session_closed"),
            Error::DuplicateResponse { .. } => (StatusCode::CONFLICT, "duplicate_response"),
            Error::Invalid(_) | Error::InsufficientMorals(_) => (StatusCode::BAD_REQUEST, "invalid"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{e}");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn check_admin(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let Some(want) = &state.admin_token else {
        return Ok(());
    };
    match headers.get(ADMIN_TOKEN_HEADER).and_then(|v| v.to_str().ok()) {
        Some(got) if got == &**want => Ok(()),
        _ => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "admin token required")),
    }
}

async fn create_session(
    State(st): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<NewSession>,
) -> ApiResult<impl IntoResponse> {
    check_admin(&st, &headers)?;
    let info = st.service.create_session(req)?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_sessions(State(st): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    check_admin(&st, &headers)?;
    Ok(Json(st.service.sessions()))
}

async fn export(State(st): State<AppState>, headers: HeaderMap) -> ApiResult<impl IntoResponse> {
    check_admin(&st, &headers)?;
    let mut buf = Vec::new();
    st.service.write_export(&mut buf)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf))
}

async fn session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.service.session(&id)?))
}

async fn next_item(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.service.next_item(&id)?))
}

async fn respond(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<ResponseBody>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(st.service.record_response(&id, &body.entry_id, &body.choice, body.latency_ms)?))
}

pub fn router(service: Arc<SurveyService>, admin_token: Option<String>) -> Router {
    let state = AppState {
        service,
        admin_token: admin_token.map(Arc::from),
    };
    Router::new()
        .route("/admin/sessions", post(create_session).get(list_sessions))
        .route("/admin/export", get(export))
        .route("/session/{id}", get(session))
        .route("/session/{id}/next", get(next_item))
        .route("/session/{id}/response", post(respond))
        .with_state(state)
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(addr: SocketAddr, service: Arc<SurveyService>, admin_token: Option<String>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("survey service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service, admin_token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
