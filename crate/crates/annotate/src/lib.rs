//! HTTP front of an [`AnnotationStore`].
//!
//! | Method | Path            | Success                          |
//! |--------|-----------------|----------------------------------|
//! | GET    | `/task?worker=W`| 200 task JSON, 204 when none left|
//! | POST   | `/judgment`     | 200 `{"status":"accepted"}`      |
//! | GET    | `/progress`     | 200 progress JSON                |
//! | GET    | `/export/qrels` | 200 qrels TSV                    |
//!
//! Rejected submissions get 422 with `{"errors": [{"field", "reason"}]}`;
//! a second submission by the same worker for a conversation gets 409.
//! Any other path is served from the static UI directory when one is
//! configured.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use proact_core::annotation::{AnnotationStore, HitSubmission, SubmitError};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

type Shared = Arc<AnnotationStore>;

pub fn router(store: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/task", get(next_task))
        .route("/judgment", post(submit))
        .route("/progress", get(progress))
        .route("/export/qrels", get(export_qrels))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, app: Router) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn error(status: StatusCode, message: impl ToString) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

#[derive(Deserialize)]
struct TaskQuery {
    worker: Option<String>,
}

async fn next_task(State(store): State<Shared>, Query(q): Query<TaskQuery>) -> Response {
    let Some(worker) = q.worker.filter(|w| !w.trim().is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "query parameter `worker` is required");
    };
    match store.next_task(&worker) {
        Ok(Some(task)) => Json(task).into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn submit(State(store): State<Shared>, Json(submission): Json<HitSubmission>) -> Response {
    let result = tokio::task::spawn_blocking(move || store.submit(&submission)).await;
    match result {
        Ok(Ok(())) => Json(json!({ "status": "accepted" })).into_response(),
        Ok(Err(SubmitError::Invalid(errors))) => {
            (StatusCode::UNPROCESSABLE_ENTITY, Json(json!({ "errors": errors }))).into_response()
        }
        Ok(Err(e @ SubmitError::Duplicate { .. })) => error(StatusCode::CONFLICT, e),
        Ok(Err(SubmitError::Store(e))) => {
            log::error!("failed to record submission: {e}");
            error(StatusCode::INTERNAL_SERVER_ERROR, e)
        }
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn progress(State(store): State<Shared>) -> Response {
    Json(store.progress()).into_response()
}

async fn export_qrels(State(store): State<Shared>) -> Response {
    let report = match store.export() {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e),
    };
    let mut body = Vec::new();
    if let Err(e) = proact_core::io::write_qrels_to(&mut body, &report.qrels) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e);
    }
    let mut response = (
        [(header::CONTENT_TYPE, HeaderValue::from_static("text/tab-separated-values; charset=utf-8"))],
        body,
    )
        .into_response();
    let headers = response.headers_mut();
    headers.insert("x-incomplete-pairs", HeaderValue::from(report.incomplete.len()));
    headers.insert("x-defaulted-ideal-turns", HeaderValue::from(report.defaulted_ideal_turn.len()));
    response
}
