use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use super::{Mode, StudyService};
use crate::error::Error;

pub type SharedService = Arc<Mutex<StudyService>>;

/// Maps library errors onto HTTP status codes with a JSON body.
pub struct ApiError(pub Error);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match &self.0 {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, json!({ "error": self.0.to_string() })),
            Error::Conflict(_) => (StatusCode::CONFLICT, json!({ "error": self.0.to_string() })),
            Error::Validation(fields) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "validation failed", "fields": fields }),
            ),
            Error::InvalidArgument(_) => (StatusCode::BAD_REQUEST, json!({ "error": self.0.to_string() })),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": self.0.to_string() })),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn lock(svc: &SharedService) -> std::sync::MutexGuard<'_, StudyService> {
    svc.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Deserialize)]
struct CreateSession {
    rater_id: String,
    #[serde(default)]
    mode: Mode,
}

async fn create_session(State(svc): State<SharedService>, Json(body): Json<CreateSession>) -> ApiResult<Json<Value>> {
    let progress = lock(&svc).create_session(&body.rater_id, body.mode).map_err(ApiError)?;
    Ok(Json(serde_json::to_value(progress).map_err(|e| ApiError(e.into()))?))
}

async fn next_item(State(svc): State<SharedService>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let item = lock(&svc).next_item(&id).map_err(ApiError)?;
    Ok(Json(serde_json::to_value(item).map_err(|e| ApiError(e.into()))?))
}

async fn submit(
    State(svc): State<SharedService>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<Json<Value>> {
    let value: Value = serde_json::from_slice(&body).map_err(|_| ApiError(Error::Validation(vec!["body".into()])))?;
    let ack = lock(&svc).submit(&id, &value).map_err(ApiError)?;
    Ok(Json(serde_json::to_value(ack).map_err(|e| ApiError(e.into()))?))
}

async fn progress(State(svc): State<SharedService>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let p = lock(&svc).progress(&id).map_err(ApiError)?;
    Ok(Json(serde_json::to_value(p).map_err(|e| ApiError(e.into()))?))
}

async fn image(State(svc): State<SharedService>, Path(token): Path<String>) -> ApiResult<Response> {
    let bytes = lock(&svc).image_png(&token).map_err(ApiError)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

pub fn router(svc: SharedService) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/session/{id}/next", get(next_item))
        .route("/api/session/{id}/response", post(submit))
        .route("/api/session/{id}/progress", get(progress))
        .route("/api/image/{image_id}", get(image))
        .with_state(svc)
}

/// Serves until Ctrl-C. Every accepted answer is already on disk, so
/// stopping at any point loses nothing.
pub async fn serve(svc: StudyService, addr: std::net::SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    axum::serve(listener, router(Arc::new(Mutex::new(svc))))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}
