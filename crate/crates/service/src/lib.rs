//! HTTP API over the transfer pipeline.
//!
//! Routes:
//! - `GET /api/health`: model and library readiness
//! - `GET /api/styles`, `POST /api/styles` (multipart `image`)
//! - `GET /api/styles/{id}/thumbnail`, `GET /api/styles/{id}/reference`
//! - `POST /api/transfer` (multipart, see [`routes::TransferForm`])
//! - `GET /api/result/{id}`, `GET /api/result/{id}/{artifact}`
//!
//! Images travel as PNG. Errors are JSON documents `{category, message, detail}`.

pub mod config;
pub mod error;
pub mod results;
pub mod routes;
pub mod styles;

use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use thiserror::Error;
use uvmakeup_core::pipeline::{ModelBundle, Pipeline};
use uvmakeup_core::uvgeom::SilhouetteProvider;
use uvmakeup_core::UvLayout;

pub use config::{ConfigError, ServiceConfig};
pub use error::ApiError;
pub use results::{ResultStore, StoredResult};
pub use routes::router;
pub use styles::{StyleEntry, StyleInfo, StyleLibrary};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] uvmakeup_core::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Shared server state. Models are immutable once loaded; the style library
/// takes a write lock only while storing a new style.
pub struct AppState {
    pub config: ServiceConfig,
    pipeline: Option<Arc<Pipeline>>,
    styles: RwLock<StyleLibrary>,
    results: Mutex<ResultStore>,
}

impl AppState {
    pub fn new(config: ServiceConfig, pipeline: Option<Pipeline>) -> uvmakeup_core::Result<Self> {
        let styles = StyleLibrary::open(&config.styles)?;
        let results = ResultStore::new(config.max_results);
        Ok(Self { pipeline: pipeline.map(Arc::new), styles: RwLock::new(styles), results: Mutex::new(results), config })
    }

    /// Loads models from `config.models`. A missing or broken model directory
    /// leaves the service up but not ready.
    pub fn from_config(config: ServiceConfig) -> uvmakeup_core::Result<Self> {
        let pipeline = match load_pipeline(&config.models) {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("models not loaded from {}: {e}", config.models.display());
                None
            }
        };
        Self::new(config, pipeline)
    }

    pub fn pipeline(&self) -> Option<&Arc<Pipeline>> {
        self.pipeline.as_ref()
    }

    pub fn styles(&self) -> RwLockReadGuard<'_, StyleLibrary> {
        self.styles.read().unwrap_or_else(|e| e.into_inner())
    }

    fn styles_mut(&self) -> RwLockWriteGuard<'_, StyleLibrary> {
        self.styles.write().unwrap_or_else(|e| e.into_inner())
    }

    fn results(&self) -> MutexGuard<'_, ResultStore> {
        self.results.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Pipeline over silhouette-fitted geometry with whatever checkpoints `dir` holds.
pub fn load_pipeline(dir: &Path) -> uvmakeup_core::Result<Pipeline> {
    let bundle = ModelBundle::load(dir)?;
    if bundle.color.is_none() && bundle.pattern.is_none() {
        return Err(uvmakeup_core::Error::ModelMissing("color"));
    }
    Ok(Pipeline::from_bundle(Arc::new(SilhouetteProvider::new(UvLayout::default())), bundle))
}

/// Binds `config.bind` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let addr = config.bind.clone();
    let state = Arc::new(AppState::from_config(config)?);
    let listener =
        tokio::net::TcpListener::bind(&addr).await.map_err(|source| ServeError::Bind { addr: addr.clone(), source })?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
