use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::broadcast::error::RecvError;

use super::{ApiError, Service};

type Shared = Arc<Service>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body)).into_response()
    }
}

/// Bodies are parsed here rather than by `Json` so that unknown fields and
/// malformed JSON get the service's own error document.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::new(400, "invalid_body", e.to_string()))
}

async fn blocking<T, F>(service: Shared, f: F) -> Result<Json<T>, ApiError>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Service) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&service)).await.map_err(ApiError::internal)?.map(Json)
}

async fn auth(State(service): State<Shared>, request: Request, next: Next) -> Response {
    let expected = format!("Bearer {}", service.token());
    let given = request.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
    if given != Some(expected.as_str()) {
        return ApiError::new(401, "unauthorized", "missing or wrong bearer token").into_response();
    }
    next.run(request).await
}

/// All routes live under `/v1` and require `Authorization: Bearer <token>`.
pub fn router(service: Shared) -> Router {
    let v1 = Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/belief", get(belief))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/observations", post(observe))
        .route("/sessions/{id}/what-if", post(what_if))
        .route("/sessions/{id}/close", post(close))
        .route("/sessions/{id}/audit", get(audit))
        .route("/sessions/{id}/stream", get(stream))
        .route("/library", get(library_index))
        .route("/library/entries", post(add_entry))
        .route("/library/entries/{id}", get(library_entry).put(replace_entry).delete(remove_entry))
        .route("/library/priors/{id}", get(priors))
        .route("/library/export", get(export))
        .layer(middleware::from_fn_with_state(service.clone(), auth))
        .with_state(service);
    Router::new().nest("/v1", v1)
}

async fn create_session(State(s): State<Shared>, bytes: Bytes) -> Result<Response, ApiError> {
    let request = body(&bytes)?;
    let view = blocking(s, move |s| s.create_session(&request)).await?;
    Ok((StatusCode::CREATED, view).into_response())
}

async fn list_sessions(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.list_sessions())
}

async fn session_summary(State(s): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.summary(&id)?))
}

async fn belief(State(s): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.belief(&id)?))
}

async fn session_state(State(s): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.state(&id)?))
}

async fn observe(State(s): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> Result<impl IntoResponse, ApiError> {
    let record = body(&bytes)?;
    blocking(s, move |s| s.observe(&id, &record)).await
}

async fn what_if(State(s): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> Result<impl IntoResponse, ApiError> {
    let query = body(&bytes)?;
    blocking(s, move |s| s.what_if(&id, &query)).await
}

async fn close(State(s): State<Shared>, Path(id): Path<String>, bytes: Bytes) -> Result<impl IntoResponse, ApiError> {
    let incident = body(&bytes)?;
    blocking(s, move |s| s.close(&id, &incident)).await
}

async fn audit(State(s): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    blocking(s, move |s| s.audit(&id)).await
}

/// Server-sent events: the current belief first, then one `belief` event
/// per absorbed observation.
async fn stream(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let (current, rx) = s.subscribe(&id)?;
    let event = |view: &crate::api::BeliefView| {
        Event::default().event("belief").id(view.t.to_string()).json_data(view).expect("views serialize")
    };
    let first = stream::once({
        let e = event(&current);
        async move { Ok(e) }
    });
    let rest = stream::unfold(rx, move |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(view) => return Some((Ok(event(&view)), rx)),
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream::StreamExt::chain(first, rest)).keep_alive(KeepAlive::default()))
}

async fn library_index(State(s): State<Shared>) -> impl IntoResponse {
    Json(s.library_index())
}

async fn library_entry(State(s): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.library_entry(&id)?))
}

async fn add_entry(State(s): State<Shared>, bytes: Bytes) -> Result<Response, ApiError> {
    let request = body(&bytes)?;
    let receipt = blocking(s, move |s| s.add_entry(&request)).await?;
    Ok((StatusCode::CREATED, receipt).into_response())
}

async fn replace_entry(
    State(s): State<Shared>,
    Path(id): Path<String>,
    bytes: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let request = body(&bytes)?;
    blocking(s, move |s| s.replace_entry(&id, &request)).await
}

async fn remove_entry(State(s): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let _ = blocking(s, move |s| s.remove_entry(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn priors(State(s): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(s.priors(&id)?))
}

async fn export(State(s): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    let doc = s.export()?;
    Ok(([(header::CONTENT_DISPOSITION, "attachment; filename=\"library-export.json\"")], Json(doc)))
}

/// Binds `addr`, prints `listening on http://<addr>` to stdout and serves
/// until the process ends.
pub async fn serve(service: Service, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("listening on http://{}", listener.local_addr()?);
    use std::io::Write;
    std::io::stdout().flush()?;
    axum::serve(listener, router(Arc::new(service))).await
}
