//! JSON-over-HTTP facade: register a source, build a graph, ask questions,
//! annotate, and leave feedback. Every route needs a bearer token.

mod auth;
mod error;
pub mod registry;
mod routes;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::routing::{get, patch, post};
use axum::Router;
use chrono::{DateTime, Utc};
use ctxsql_core::access::Principals;
use ctxsql_core::adjudicator::{self, Adjudicator};
use ctxsql_core::config::Config;
use ctxsql_core::planner::Planner;
use ctxsql_core::profile::{open_source, DataSourceAdapter};
use ctxsql_core::store::{Store, StoreError};
use serde::{Deserialize, Serialize};

pub use auth::Auth;
pub use error::ApiError;
pub use registry::{DatasourceConfig, Registry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BuildStatus {
    Building,
    Ready,
    Failed { reason: String },
}

/// Shared handles. Graph snapshots and history live in the store; the maps
/// here are caches and in-flight build state.
pub struct AppState {
    pub config: Config,
    pub store: Store,
    pub registry: Registry,
    pub principals: Principals,
    pub adjudicator: Arc<dyn Adjudicator>,
    /// Fixed clock for reproducible runs; wall clock when `None`.
    pub clock: Option<DateTime<Utc>>,
    adapters: Mutex<BTreeMap<String, Arc<dyn DataSourceAdapter>>>,
    planners: RwLock<BTreeMap<String, Arc<Planner>>>,
    builds: Mutex<BTreeMap<String, BuildStatus>>,
    annotate_lock: tokio::sync::Mutex<()>,
}

#[derive(Debug, thiserror::Error)]
pub enum StartError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Principals(#[from] ctxsql_core::access::PrincipalsError),
    #[error(transparent)]
    Config(#[from] ctxsql_core::config::ConfigError),
}

impl AppState {
    pub fn new(config: Config, principals: Principals, adjudicator: Arc<dyn Adjudicator>) -> Result<Self, StartError> {
        let store = Store::open(&config.data_dir)?;
        let registry = Registry::open(&config.data_dir)?;
        Ok(AppState {
            config,
            store,
            registry,
            principals,
            adjudicator,
            clock: None,
            adapters: Mutex::default(),
            planners: RwLock::default(),
            builds: Mutex::default(),
            annotate_lock: tokio::sync::Mutex::new(()),
        })
    }

    /// Principals from the configured file and the adjudicator from the
    /// environment.
    pub fn from_config(config: Config) -> Result<Self, StartError> {
        let principals = match &config.principals {
            Some(p) => Principals::load(p)?,
            None => {
                tracing::warn!("no principals file configured; every request will be rejected");
                Principals::default()
            }
        };
        let adj: Arc<dyn Adjudicator> = Arc::from(adjudicator::from_env());
        Self::new(config, principals, adj)
    }

    pub fn with_clock(mut self, clock: DateTime<Utc>) -> Self {
        self.clock = Some(clock);
        self
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.unwrap_or_else(Utc::now)
    }

    /// Replaces the adapter used for a datasource id, e.g. with an
    /// instrumented wrapper.
    pub fn insert_adapter(&self, datasource: &str, adapter: Arc<dyn DataSourceAdapter>) {
        self.adapters.lock().unwrap_or_else(|p| p.into_inner()).insert(datasource.to_string(), adapter);
    }

    pub(crate) fn adapter(&self, datasource: &str) -> Result<Arc<dyn DataSourceAdapter>, ApiError> {
        let mut cache = self.adapters.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(a) = cache.get(datasource) {
            return Ok(a.clone());
        }
        let cfg = self.registry.datasource(datasource).ok_or_else(|| ApiError::not_found(format!("datasource {datasource}")))?;
        let a: Arc<dyn DataSourceAdapter> =
            Arc::from(open_source(cfg.kind, &cfg.path).map_err(|e| ApiError::unprocessable(e.to_string()))?);
        cache.insert(datasource.to_string(), a.clone());
        Ok(a)
    }

    pub(crate) fn planner(&self, graph_id: &str) -> Result<Arc<Planner>, ApiError> {
        if let Some(p) = self.planners.read().unwrap_or_else(|p| p.into_inner()).get(graph_id) {
            return Ok(p.clone());
        }
        let graph = self.store.load_graph(graph_id).map_err(|e| match e {
            StoreError::NotFound(_) | StoreError::Invalid(_) => ApiError::not_found(format!("graph {graph_id}")),
            other => other.into(),
        })?;
        let p = Arc::new(Planner::new(graph));
        self.planners.write().unwrap_or_else(|p| p.into_inner()).insert(graph_id.to_string(), p.clone());
        Ok(p)
    }

    pub(crate) fn forget_planner(&self, graph_id: &str) {
        self.planners.write().unwrap_or_else(|p| p.into_inner()).remove(graph_id);
    }

    pub fn build_status(&self, graph_id: &str) -> Option<BuildStatus> {
        let live = self.builds.lock().unwrap_or_else(|p| p.into_inner()).get(graph_id).cloned();
        live.or_else(|| self.store.load_graph(graph_id).ok().map(|_| BuildStatus::Ready))
    }

    /// Marks a build as running; false when one already is.
    pub(crate) fn begin_build(&self, graph_id: &str) -> bool {
        let mut b = self.builds.lock().unwrap_or_else(|p| p.into_inner());
        if b.get(graph_id) == Some(&BuildStatus::Building) {
            return false;
        }
        b.insert(graph_id.to_string(), BuildStatus::Building);
        true
    }

    pub(crate) fn finish_build(&self, graph_id: &str, status: BuildStatus) {
        self.builds.lock().unwrap_or_else(|p| p.into_inner()).insert(graph_id.to_string(), status);
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/datasources", post(routes::register_datasource).get(routes::list_datasources))
        .route("/v1/graphs", post(routes::create_graph).get(routes::list_graphs))
        .route("/v1/graphs/{id}", get(routes::get_graph))
        .route("/v1/graphs/{id}/status", get(routes::graph_status))
        .route("/v1/graphs/{id}/query", post(routes::query))
        .route("/v1/graphs/{id}/annotations", patch(routes::annotate))
        .route("/v1/feedback", post(routes::submit_feedback).get(routes::list_feedback))
        .route("/v1/feedback/review", post(routes::review_feedback))
        .route("/v1/feedback/resolve", post(routes::resolve_feedback))
        .route("/v1/bookmarks", post(routes::add_bookmark).get(routes::list_bookmarks))
        .route("/v1/history", get(routes::history))
        .route("/v1/insights", get(routes::insights))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state)).await
}
