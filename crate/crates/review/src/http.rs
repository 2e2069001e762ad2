//! JSON HTTP API over [`ReviewService`].

use std::io::SeekFrom;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::io::{AsyncReadExt, AsyncSeekExt};

use crate::model::{Answer, RealismOption, Side};
use crate::service::{ReviewService, ServiceError, TaskKind};

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::UnknownVideo(_) => StatusCode::NOT_FOUND,
            ServiceError::UnknownRater(_) => StatusCode::FORBIDDEN,
            ServiceError::NotGated(_) => StatusCode::CONFLICT,
            ServiceError::InvalidRoster(_) | ServiceError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(service: Arc<ReviewService>) -> Router {
    Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/ratings", post(post_rating))
        .route("/api/judgments", post(post_judgment))
        .route("/api/reports/realism", get(realism_report))
        .route("/api/reports/paired", get(paired_report))
        .route("/api/gate", get(gate))
        .route("/api/videos/{id}/stream", get(stream_video))
        .with_state(service)
}

#[derive(Deserialize)]
struct NextQuery {
    rater: String,
    kind: TaskKind,
}

async fn next_task(State(s): State<Arc<ReviewService>>, Query(q): Query<NextQuery>) -> ApiResult<Response> {
    Ok(Json(s.next_task(&q.rater, q.kind)?).into_response())
}

#[derive(Deserialize)]
struct RatingBody {
    rater_id: String,
    video_id: String,
    option: RealismOption,
}

#[derive(Deserialize)]
struct JudgmentBody {
    clinician_id: String,
    pair_id: String,
    answer: Answer,
    #[serde(default)]
    real_side: Option<Side>,
}

/// Writes fsync, so they run off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

async fn post_rating(State(s): State<Arc<ReviewService>>, Json(b): Json<RatingBody>) -> ApiResult<Response> {
    let (status, record) = blocking(move || s.submit_rating(&b.rater_id, &b.video_id, b.option)).await?;
    Ok(Json(json!({ "status": status, "record": record })).into_response())
}

async fn post_judgment(State(s): State<Arc<ReviewService>>, Json(b): Json<JudgmentBody>) -> ApiResult<Response> {
    let (status, record) =
        blocking(move || s.submit_judgment(&b.clinician_id, &b.pair_id, b.answer, b.real_side)).await?;
    Ok(Json(json!({ "status": status, "record": record })).into_response())
}

async fn realism_report(State(s): State<Arc<ReviewService>>) -> Response {
    Json(s.realism_report()).into_response()
}

async fn paired_report(State(s): State<Arc<ReviewService>>) -> Response {
    Json(s.paired_report()).into_response()
}

async fn gate(State(s): State<Arc<ReviewService>>) -> Response {
    Json(s.gate()).into_response()
}

/// Parse a single `bytes=` range against a body of `len` bytes.
/// `Ok(None)` means no usable range header (serve everything).
pub fn parse_range(header: Option<&str>, len: u64) -> Result<Option<(u64, u64)>, ()> {
    let Some(h) = header else { return Ok(None) };
    let Some(spec) = h.trim().strip_prefix("bytes=") else {
        return Ok(None);
    };
    if spec.contains(',') {
        // Multipart ranges are not supported; fall back to the full body.
        return Ok(None);
    }
    let (a, b) = spec.split_once('-').ok_or(())?;
    let (a, b) = (a.trim(), b.trim());
    let range = if a.is_empty() {
        let n: u64 = b.parse().map_err(|_| ())?;
        if n == 0 || len == 0 {
            return Err(());
        }
        (len.saturating_sub(n), len - 1)
    } else {
        let start: u64 = a.parse().map_err(|_| ())?;
        let end = if b.is_empty() { len.saturating_sub(1) } else { b.parse::<u64>().map_err(|_| ())?.min(len.saturating_sub(1)) };
        if start >= len || end < start {
            return Err(());
        }
        (start, end)
    };
    Ok(Some(range))
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("mp4" | "m4v") => "video/mp4",
        Some("webm") => "video/webm",
        Some("gif") => "image/gif",
        Some("png") => "image/png",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn stream_video(
    State(s): State<Arc<ReviewService>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let path = s
        .roster()
        .clip_path(&id)
        .ok_or_else(|| ApiError::from(ServiceError::UnknownVideo(id.clone())))?
        .to_path_buf();
    let io_err = |e: std::io::Error| ApiError::new(StatusCode::NOT_FOUND, "video_unavailable", e.to_string());
    let mut file = tokio::fs::File::open(&path).await.map_err(io_err)?;
    let len = file.metadata().await.map_err(io_err)?.len();
    let range = parse_range(headers.get(header::RANGE).and_then(|v| v.to_str().ok()), len);
    let ctype = HeaderValue::from_static(content_type(&path));
    match range {
        Err(()) => Ok((
            StatusCode::RANGE_NOT_SATISFIABLE,
            [(header::CONTENT_RANGE, format!("bytes */{len}"))],
        )
            .into_response()),
        Ok(None) => {
            let mut buf = Vec::with_capacity(len as usize);
            file.read_to_end(&mut buf).await.map_err(io_err)?;
            let mut resp = Response::new(Body::from(buf));
            resp.headers_mut().insert(header::CONTENT_TYPE, ctype);
            resp.headers_mut().insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
            Ok(resp)
        }
        Ok(Some((start, end))) => {
            file.seek(SeekFrom::Start(start)).await.map_err(io_err)?;
            let mut buf = vec![0u8; (end - start + 1) as usize];
            file.read_exact(&mut buf).await.map_err(io_err)?;
            let mut resp = Response::new(Body::from(buf));
            *resp.status_mut() = StatusCode::PARTIAL_CONTENT;
            let h = resp.headers_mut();
            h.insert(header::CONTENT_TYPE, ctype);
            h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
            h.insert(
                header::CONTENT_RANGE,
                HeaderValue::from_str(&format!("bytes {start}-{end}/{len}")).expect("ascii"),
            );
            Ok(resp)
        }
    }
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    service: Arc<ReviewService>,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(service, listener, shutdown).await
}

/// Serve on an already-bound listener (lets callers report the real port
/// when binding to port 0).
pub async fn serve_on(
    service: Arc<ReviewService>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}
