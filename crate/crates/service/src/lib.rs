//! HTTP services: apprentices hold one corpus shard each and answer clone
//! queries; the manager registers apprentices, fans query sets out to them
//! and keeps the resulting reports.

pub mod apprentice;
pub mod client;
mod error;
pub mod manager;
mod payload;

use std::future::Future;

use tokio::net::TcpListener;

pub use apprentice::{ApprenticeState, ApprenticeStatus, LoadParams, QueryRequest, QueryResponse, ServiceState};
pub use client::{ApprenticeClient, ClientError, ManagerClient};
pub use error::ServiceError;
pub use manager::{ApprenticeRecord, ManagerState, QuerySetRecord, ReportRequest, DEFAULT_CHUNK_SIZE};

/// Serve `router` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    router: axum::Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}
