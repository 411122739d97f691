//! HTTP API for exploring a trained character encoder: embeddings,
//! decoding arbitrary latent vectors, nearest characters, single-dimension
//! perturbation previews and optional text classification.
//!
//! All state is loaded at startup and shared read-only between requests.

pub mod api;
mod error;
pub mod image;
mod state;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

pub use api::router;
pub use error::{ApiError, StartupError};
pub use state::{Classifier, ServiceState, ACTIVE_KL};

pub const DEFAULT_PORT: u16 = 8307;

/// Serves until Ctrl-C.
pub async fn serve(state: ServiceState, addr: SocketAddr, static_dir: Option<&Path>) -> Result<(), StartupError> {
    let app = router(Arc::new(state), static_dir);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| StartupError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(StartupError::Serve)
}
