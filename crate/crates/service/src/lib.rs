//! HTTP decision service: risk prediction with attribution, similar-patient
//! retrieval, outcome flows, what-if scenarios, treatment significance and
//! disease reference text, all as JSON under `/api`.
//!
//! Every response object carries `schema_version`. Errors share the body
//! `{schema_version, error_code, message, detail}`.

pub mod api;
pub mod config;
pub mod engine;
pub mod error;
pub mod scenarios;

use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use clinrisk_core::disease::DiseaseCatalog;

pub use config::{ConfigError, ServiceConfig};
pub use engine::Engine;
pub use error::ApiError;
pub use scenarios::{LogRecord, ScenarioStore};

pub const SCHEMA_VERSION: u32 = 1;

/// JSON Schema for every response body, one `$defs` entry per response
/// kind (`predict_response`, `error_response`, ...). Served at `/api/schema`.
pub const API_SCHEMA: &str = include_str!("../schema/api.json");

/// A standalone schema for one response kind, or `None` if `name` is not
/// defined.
pub fn response_schema(name: &str) -> Option<serde_json::Value> {
    let mut doc: serde_json::Value = serde_json::from_str(API_SCHEMA).expect("bundled schema parses");
    doc["$defs"].get(name)?;
    doc["$ref"] = serde_json::Value::String(format!("#/$defs/{name}"));
    Some(doc)
}

#[derive(Debug, Clone)]
pub struct AppState {
    /// `None` when the model or cohort failed to load; data endpoints then
    /// answer `engine_not_loaded`.
    pub engine: Option<Arc<Engine>>,
    pub diseases: Arc<DiseaseCatalog>,
    pub scenarios: Arc<ScenarioStore>,
}

impl AppState {
    pub fn new(engine: Option<Engine>, diseases: DiseaseCatalog, scenarios: ScenarioStore) -> Self {
        Self { engine: engine.map(Arc::new), diseases: Arc::new(diseases), scenarios: Arc::new(scenarios) }
    }

    /// Loads everything named by `config`. Load failures are logged and
    /// leave the corresponding part empty so the service can still start.
    pub fn from_config(config: &ServiceConfig) -> std::io::Result<Self> {
        let engine = match Engine::load(&config.cohort, &config.checkpoint) {
            Ok(e) => {
                log::info!("loaded {} patients and {} targets", e.samples.len(), e.model.n_targets());
                Some(e)
            }
            Err(e) => {
                log::error!("engine not loaded: {e}");
                None
            }
        };
        let diseases = match &config.descriptions {
            Some(path) => DiseaseCatalog::load(path).unwrap_or_else(|e| {
                log::error!("disease descriptions not loaded: {e}");
                DiseaseCatalog::default()
            }),
            None => DiseaseCatalog::default(),
        };
        let scenarios = match &config.scenario_log {
            Some(path) => ScenarioStore::open(path, engine.as_ref())?,
            None => ScenarioStore::in_memory(),
        };
        Ok(Self::new(engine, diseases, scenarios))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/schema", get(api::schema))
        .route("/api/meta", get(api::meta))
        .route("/api/patients", get(api::list_patients))
        .route("/api/patients/{id}", get(api::get_patient))
        .route("/api/predict", post(api::predict))
        .route("/api/similar", post(api::similar))
        .route("/api/similar/aggregate", post(api::aggregate))
        .route("/api/scenarios", post(api::create_scenario).get(api::list_scenarios))
        .route("/api/scenarios/{id}", get(api::get_scenario))
        .route("/api/scenarios/{id}/edits", post(api::edit_scenario))
        .route("/api/significance", post(api::significance))
        .route("/api/diseases/{code}", get(api::disease))
        .fallback(api::not_found)
        .with_state(state)
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(config: &ServiceConfig) -> std::io::Result<()> {
    let state = AppState::from_config(config)?;
    let listener = tokio::net::TcpListener::bind(config.address()).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
