//! HTTP gateway. Handlers hand the blocking work to [`App`] on the tokio
//! blocking pool; all bodies are JSON.

use crate::app::{ApiError, App, MessageRequest, SearchRequest};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use vagent_core::ingest::ManifestLine;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

type Reply = Result<Response, ApiError>;

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn body<T: DeserializeOwned>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("BadRequest", e.body_text()))
}

fn ok(status: u16, v: impl serde::Serialize) -> Reply {
    let status = StatusCode::from_u16(status).map_err(ApiError::internal)?;
    Ok((status, Json(v)).into_response())
}

async fn health(State(app): State<Arc<App>>) -> Reply {
    ok(200, app.health())
}

async fn search(State(app): State<Arc<App>>, payload: Result<Json<SearchRequest>, JsonRejection>) -> Reply {
    let req = body(payload)?;
    ok(200, blocking(move || app.search(&req)).await?)
}

async fn index(State(app): State<Arc<App>>, payload: Result<Json<ManifestLine>, JsonRejection>) -> Reply {
    let line = body(payload)?;
    let (status, v) = blocking(move || app.index_record(line)).await?;
    ok(status, v)
}

async fn create_session(State(app): State<Arc<App>>) -> Reply {
    ok(201, blocking(move || app.create_session()).await?)
}

async fn get_session(State(app): State<Arc<App>>, Path(id): Path<String>) -> Reply {
    ok(200, blocking(move || app.session(&id)).await?)
}

async fn post_message(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    payload: Result<Json<MessageRequest>, JsonRejection>,
) -> Reply {
    let req = body(payload)?;
    ok(200, blocking(move || app.post_message(&id, &req)).await?)
}

#[derive(Deserialize)]
struct VideoParams {
    #[serde(default)]
    embeddings: Option<String>,
}

async fn video(State(app): State<Arc<App>>, Path(id): Path<String>, Query(q): Query<VideoParams>) -> Reply {
    let with = matches!(q.embeddings.as_deref(), Some("1" | "true" | "yes"));
    ok(200, blocking(move || app.video(&id, with)).await?)
}

async fn not_found() -> ApiError {
    ApiError::new(404, "NotFound", "no such endpoint")
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/index", post(index))
        .route("/v1/search", post(search))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/videos/{id}", get(video))
        .fallback(not_found)
        .with_state(app)
}

/// Serves until `shutdown` resolves, then flushes indexes and sessions.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Arc<App>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    tokio::task::spawn_blocking(move || app.shutdown())
        .await
        .map_err(std::io::Error::other)?
        .map_err(std::io::Error::other)
}

/// A server on its own runtime thread, for embedding and tests.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting, drains in-flight requests and flushes state.
    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| std::io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

pub fn spawn(app: Arc<App>, bind: &str) -> std::io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(bind)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("vagent-http".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                serve(listener, app, async {
                    let _ = rx.await;
                })
                .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        stop: Some(tx),
        thread: Some(thread),
    })
}
