//! HTTP facade over a [`Workspace`], mounted under `/api/v1`.
//!
//! Every non-2xx response body is an [`ApiError`]. Core operations run on
//! the blocking pool; the workspace's own locks serialize mutations.

mod error;
mod handlers;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Request};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use curaloop::workspace::{Workspace, WorkspaceError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use error::ApiError;

pub const API_PREFIX: &str = "/api/v1";
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    pub token: Option<Arc<str>>,
}

impl AppState {
    pub fn new(workspace: Arc<Workspace>, token: Option<String>) -> Self {
        Self {
            workspace,
            token: token.map(Into::into),
        }
    }

    /// Runs a core operation on the blocking pool.
    pub(crate) async fn run<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&Workspace) -> Result<T, WorkspaceError> + Send + 'static,
    {
        let ws = self.workspace.clone();
        tokio::task::spawn_blocking(move || f(&ws))
            .await
            .map_err(|e| ApiError::new("internal_error", format!("worker failed: {e}")))?
            .map_err(ApiError::from)
    }
}

/// `Json` whose rejections are [`ApiError`]s.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let axum::Json(v) = axum::Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(v))
    }
}

/// `Query` whose rejections are [`ApiError`]s.
pub struct ApiQuery<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        let axum::extract::Query(v) = axum::extract::Query::<T>::from_request_parts(parts, state).await?;
        Ok(ApiQuery(v))
    }
}

/// One page of a cursor-paginated listing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    /// Pass back as `cursor` to fetch the next page; absent on the last page.
    pub next_cursor: Option<String>,
}

/// Items strictly after `cursor` (by `key`), at most `limit` of them.
pub(crate) fn paginate<T>(items: Vec<T>, key: impl Fn(&T) -> String, cursor: Option<&str>, limit: Option<usize>) -> Result<Page<T>, ApiError> {
    let limit = limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::validation(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let start = match cursor {
        None => 0,
        Some(c) => items.iter().position(|i| key(i).as_str() > c).unwrap_or(items.len()),
    };
    let mut page: Vec<T> = items.into_iter().skip(start).collect();
    let more = page.len() > limit;
    page.truncate(limit);
    let next_cursor = if more { page.last().map(&key) } else { None };
    Ok(Page { items: page, next_cursor })
}

async fn require_token(state: axum::extract::State<AppState>, req: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok && req.uri().path() != format!("{API_PREFIX}/health") {
            return Err(ApiError::new("unauthorized", "missing or invalid bearer token"));
        }
    }
    Ok(next.run(req).await)
}

pub fn router(state: AppState) -> Router {
    use handlers::*;
    let api = Router::new()
        .route("/health", get(health))
        .route("/datasets", get(list_datasets).post(ingest_dataset))
        .route("/datasets/{version_id}", get(get_dataset))
        .route("/benchmarks", get(list_benchmarks))
        .route("/benchmarks/{id}", get(get_benchmark).put(put_benchmark))
        .route("/benchmarks/{id}/run", post(run_benchmark))
        .route("/augment", post(augment))
        .route("/finetune", post(finetune))
        .route("/infer", post(infer))
        .route("/runs", get(list_runs))
        .route("/runs/{id}/metrics", get(run_metrics))
        .route("/cycles", get(list_cycles).post(open_cycle))
        .route("/cycles/{id}", get(get_cycle))
        .route("/cycles/{id}/merge", post(merge_cycle))
        .route("/cycles/{id}/report", get(cycle_report))
        .route("/review/queue", get(review_queue))
        .route("/review/{review_id}", get(get_review))
        .route("/review/{review_id}/claim", post(claim))
        .route("/review/{review_id}/verdict", post(verdict));
    Router::new()
        .nest(API_PREFIX, api)
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            let mut e = ApiError::new("method_not_allowed", "method not allowed for this endpoint");
            e.status = Some(StatusCode::METHOD_NOT_ALLOWED.as_u16());
            e
        })
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Server(#[source] std::io::Error),
}

/// A running server. Dropping the handle leaves it running; call
/// [`shutdown`](Self::shutdown) to drain in-flight requests and stop.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<Result<(), std::io::Error>>,
}

impl ServiceHandle {
    pub fn url(&self) -> String {
        format!("http://{}{API_PREFIX}", self.addr)
    }

    pub async fn shutdown(mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        self.wait().await
    }

    /// Waits until the server stops on its own (for example on Ctrl-C when
    /// started with [`serve_until_signal`]).
    pub async fn wait(self) -> Result<(), ServeError> {
        match self.task.await {
            Ok(r) => r.map_err(ServeError::Server),
            Err(e) => Err(ServeError::Server(std::io::Error::other(e))),
        }
    }
}

/// Binds `bind` and serves in a background task.
pub async fn serve(state: AppState, bind: &str) -> Result<ServiceHandle, ServeError> {
    let (tx, rx) = oneshot::channel::<()>();
    start(state, bind, async move {
        let _ = rx.await;
    }, Some(tx))
    .await
}

/// Like [`serve`], but also stops on Ctrl-C.
pub async fn serve_until_signal(state: AppState, bind: &str) -> Result<ServiceHandle, ServeError> {
    let (tx, rx) = oneshot::channel::<()>();
    start(
        state,
        bind,
        async move {
            tokio::select! {
                _ = rx => {}
                _ = tokio::signal::ctrl_c() => tracing::info!("interrupt received, draining"),
            }
        },
        Some(tx),
    )
    .await
}

async fn start(
    state: AppState,
    bind: &str,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    stop: Option<oneshot::Sender<()>>,
) -> Result<ServiceHandle, ServeError> {
    let listener = TcpListener::bind(bind).await.map_err(|source| ServeError::Bind {
        addr: bind.to_owned(),
        source,
    })?;
    let addr = listener.local_addr().map_err(ServeError::Server)?;
    let app = router(state);
    let task = tokio::spawn(async move { axum::serve(listener, app).with_graceful_shutdown(shutdown).await });
    tracing::info!(%addr, "service listening");
    Ok(ServiceHandle { addr, stop, task })
}
