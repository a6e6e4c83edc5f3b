//! JSON-over-HTTP service for ingest, queries, downtime forecasts, envelopes,
//! alerts and maintenance.
//!
//! Every failure is answered with an [`ApiError`] body
//! (`{"code": "...", "message": "..."}`), including unknown routes, wrong
//! methods and unparseable payloads.

mod error;
mod routes;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::{ApiError, ErrorCode};
pub use routes::{
    compute_forecast, router, settled_frames, Health, IngestResponse, Latest, MachineSummary, MaintenanceRequest,
    MaintenanceResponse, ModelStatus, Rejection, MAX_BODY_BYTES, MAX_HORIZON_STEPS,
};
pub use state::{system_clock, AppState, Clock, StartupError};
use tokio::net::TcpListener;

/// A server bound to a port and running on the current runtime.
#[derive(Debug)]
pub struct RunningServer {
    pub addr: SocketAddr,
    pub handle: tokio::task::JoinHandle<std::io::Result<()>>,
}

/// Binds `addr` (use port 0 for an ephemeral port) and serves in the background.
pub async fn spawn(state: Arc<AppState>, addr: &str) -> std::io::Result<RunningServer> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let app = router(state);
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok(RunningServer { addr, handle })
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
