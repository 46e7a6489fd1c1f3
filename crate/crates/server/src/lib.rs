//! HTTP/JSON service over the grounding engine.
//!
//! The service owns the session state: the encoder registry, uploaded
//! scenes, per-scene feature caches and the LLM usage ledger. CPU-bound
//! work runs on the blocking pool.

mod error;
mod routes;
pub mod stub;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use lasp_core::encoder::EncoderRegistry;
use lasp_core::executor::FeatureCache;
use lasp_core::llm::{LlmConfig, PromptTemplates, UsageLedger};
use lasp_core::scene::Scene;

pub use error::ApiError;

/// Entries kept in the feature-cache map before it is cleared.
const CACHE_CAPACITY: usize = 256;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Loaded at startup when it exists and rewritten after every change.
    pub registry_path: Option<PathBuf>,
    pub llm: Option<LlmConfig>,
    pub templates: Option<PromptTemplates>,
}

#[derive(Debug)]
pub struct AppState {
    registry: RwLock<EncoderRegistry>,
    registry_path: Option<PathBuf>,
    scenes: RwLock<HashMap<String, Arc<Scene>>>,
    /// keyed by (scene fingerprint, registry generation)
    caches: Mutex<HashMap<(String, u64), Arc<FeatureCache>>>,
    llm: Option<LlmConfig>,
    templates: PromptTemplates,
    ledger: Arc<Mutex<UsageLedger>>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Result<Arc<Self>, ApiError> {
        let registry = match &config.registry_path {
            Some(p) if p.exists() => EncoderRegistry::load(p)?,
            _ => EncoderRegistry::with_builtins(),
        };
        Ok(Arc::new(Self {
            registry: RwLock::new(registry),
            registry_path: config.registry_path,
            scenes: RwLock::default(),
            caches: Mutex::default(),
            llm: config.llm,
            templates: config.templates.unwrap_or_default(),
            ledger: Arc::default(),
        }))
    }

    pub fn registry(&self) -> EncoderRegistry {
        self.registry.read().expect("registry lock").clone()
    }

    pub fn ledger(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    fn cache_for(&self, scene: &Scene) -> Arc<FeatureCache> {
        let snapshot = self.registry.read().expect("registry lock").snapshot();
        let key = (scene.fingerprint().to_string(), snapshot.generation());
        let mut caches = self.caches.lock().expect("cache lock");
        if let Some(c) = caches.get(&key) {
            return c.clone();
        }
        if caches.len() >= CACHE_CAPACITY {
            caches.clear();
        }
        let cache = Arc::new(FeatureCache::new(scene, snapshot));
        caches.insert(key, cache.clone());
        cache
    }

    fn persist(&self, registry: &EncoderRegistry) -> Result<(), ApiError> {
        if let Some(path) = &self.registry_path {
            registry.save(path).map_err(|e| ApiError::runtime(e.to_string()))?;
        }
        Ok(())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    routes::router(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A service running on a background task; dropping it stops the server.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on the current
/// runtime.
pub async fn spawn(
    addr: SocketAddr,
    config: ServerConfig,
) -> Result<ServerHandle, Box<dyn std::error::Error + Send + Sync>> {
    let state = AppState::new(config).map_err(|e| e.message)?;
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let served = state.clone();
    tokio::spawn(async move {
        if let Err(e) = serve(listener, served, async {
            let _ = rx.await;
        })
        .await
        {
            log::error!("server stopped: {e}");
        }
    });
    Ok(ServerHandle {
        addr,
        state,
        stop: Some(tx),
    })
}
