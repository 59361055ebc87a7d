//! HTTP front end for [`PawsService`].
//!
//! `POST /paws` takes one JSON envelope and answers with one JSON body. The
//! HTTP status is 200 whenever the body is a protocol response, including
//! protocol errors; `GET /health` answers `ok`.

use std::io;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;

use tvws_core::availability::AvailabilityEngine;
use tvws_core::paws::wire::handle_bytes;
use tvws_core::paws::{Clock, LogError, MemorySink, PawsService, RecordLog};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("server stopped: {0}")]
    Io(#[from] io::Error),
}

/// Service backed by the record log at `log_path`, replaying it first. With
/// no path, state lives in memory only.
pub fn open_service(
    engine: Arc<AvailabilityEngine>,
    clock: Arc<dyn Clock>,
    log_path: Option<&Path>,
) -> Result<PawsService, ServerError> {
    Ok(match log_path {
        Some(path) => {
            let (log, history) = RecordLog::open(path)?;
            PawsService::new(engine, clock, Box::new(log), &history)
        }
        None => PawsService::new(engine, clock, Box::new(MemorySink::default()), &[]),
    })
}

async fn paws(State(svc): State<Arc<PawsService>>, body: Bytes) -> impl IntoResponse {
    // appends fsync, so keep them off the async workers
    let reply = tokio::task::spawn_blocking(move || handle_bytes(&svc, &body)).await.expect("request handler panicked");
    ([(header::CONTENT_TYPE, "application/json")], reply)
}

pub fn router(svc: Arc<PawsService>) -> Router {
    Router::new().route("/paws", post(paws)).route("/health", get(|| async { "ok" })).with_state(svc)
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind { addr, source })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    svc: Arc<PawsService>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    axum::serve(listener, router(svc)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

/// Resolves on Ctrl-C.
pub async fn ctrl_c() {
    let _ = tokio::signal::ctrl_c().await;
}
