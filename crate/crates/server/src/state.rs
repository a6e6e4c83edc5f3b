use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use pdm_core::config::DataDir;
use pdm_core::downtime::{AlertManager, Controller, MaintenanceLog, OperatingEnvelope};
use pdm_core::pipeline::{ModelBundle, PipelineConfig};
use pdm_core::{PdmConfig, Schema, ServerConfig, TelemetryStore};
use thiserror::Error;

/// Milliseconds since the epoch; injectable so tests can pin time.
pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    })
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> StartupError {
    StartupError::Data { path: path.to_path_buf(), message: e.to_string() }
}

/// Shared by every request handler.
pub struct AppState {
    pub store: TelemetryStore,
    controller: Mutex<Controller>,
    pub model: Option<ModelBundle>,
    pub model_path: Option<PathBuf>,
    /// Grid settings used for envelope checks and forecasts.
    pub grid: PipelineConfig,
    pub server: ServerConfig,
    data_dir: Option<DataDir>,
    clock: Clock,
}

impl std::fmt::Debug for AppState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AppState")
            .field("schema", &self.store.schema())
            .field("model_path", &self.model_path)
            .field("data_dir", &self.data_dir)
            .finish_non_exhaustive()
    }
}

impl AppState {
    /// Opens (or creates) the data directory and loads the configured model.
    pub fn open(cfg: &PdmConfig) -> Result<Self, StartupError> {
        let dir = DataDir::new(&cfg.server.data_dir);
        std::fs::create_dir_all(&dir.0).map_err(|e| data_err(&dir.0, e))?;
        let model = match &cfg.server.model_path {
            Some(p) => Some(ModelBundle::load(p).map_err(|e| data_err(p, e))?),
            None => None,
        };
        let log = dir.telemetry();
        let schema = if log.exists() && std::fs::metadata(&log).map_err(|e| data_err(&log, e))?.len() > 0 {
            TelemetryStore::log_schema(&log).map_err(|e| data_err(&log, e))?
        } else {
            model.as_ref().map_or(cfg.sim.schema(), |m| m.pipeline().schema())
        };
        if let Some(m) = &model {
            if m.pipeline().schema() != schema {
                return Err(StartupError::Config(format!(
                    "model expects {} heating zones but the telemetry log has {}",
                    m.pipeline().zones,
                    schema.zones
                )));
            }
        }
        let store = TelemetryStore::open(&log, schema).map_err(|e| data_err(&log, e))?;
        let alerts = AlertManager::open(dir.alerts()).map_err(|e| data_err(&dir.alerts(), e))?;
        let maintenance = MaintenanceLog::open(dir.maintenance()).map_err(|e| data_err(&dir.maintenance(), e))?;
        let mut state = AppState::assemble(cfg, store, alerts, maintenance, model)?;
        state.model_path = cfg.server.model_path.clone();
        let env_path = dir.envelopes();
        if env_path.exists() {
            let text = std::fs::read_to_string(&env_path).map_err(|e| data_err(&env_path, e))?;
            let saved: BTreeMap<String, OperatingEnvelope> =
                serde_json::from_str(&text).map_err(|e| data_err(&env_path, e))?;
            let c = state.controller.get_mut().unwrap_or_else(|e| e.into_inner());
            for (machine, env) in saved {
                c.set_envelope(&machine, env).map_err(|e| data_err(&env_path, e))?;
            }
        }
        state.data_dir = Some(dir);
        Ok(state)
    }

    /// Non-durable state, for tests and embedding.
    pub fn in_memory(cfg: &PdmConfig, model: Option<ModelBundle>) -> Result<Self, StartupError> {
        let schema = model.as_ref().map_or(cfg.sim.schema(), |m| m.pipeline().schema());
        AppState::assemble(
            cfg,
            TelemetryStore::in_memory(schema),
            AlertManager::in_memory(),
            MaintenanceLog::in_memory(),
            model,
        )
    }

    fn assemble(
        cfg: &PdmConfig,
        store: TelemetryStore,
        alerts: AlertManager,
        maintenance: MaintenanceLog,
        model: Option<ModelBundle>,
    ) -> Result<Self, StartupError> {
        cfg.validate().map_err(StartupError::Config)?;
        let grid = model.as_ref().map_or(cfg.pipeline.clone(), |m| m.pipeline().config.clone());
        let warning_lead_ms = cfg.server.warning_lead_periods * grid.period_ms;
        let envelope = cfg.effective_envelope();
        let controller = Controller::new(store.schema(), envelope, alerts, maintenance, warning_lead_ms)
            .map_err(|e| StartupError::Config(e.to_string()))?;
        Ok(AppState {
            store,
            controller: Mutex::new(controller),
            model,
            model_path: None,
            grid,
            server: cfg.server.clone(),
            data_dir: None,
            clock: system_clock(),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn now(&self) -> i64 {
        (self.clock)()
    }

    pub fn schema(&self) -> Schema {
        self.store.schema()
    }

    /// Serialized access to alerts, envelopes and maintenance.
    pub fn controller(&self) -> MutexGuard<'_, Controller> {
        self.controller.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Writes the per-machine envelopes next to the other logs (atomically).
    pub fn persist_envelopes(&self, envelopes: &BTreeMap<String, OperatingEnvelope>) -> std::io::Result<()> {
        let Some(dir) = &self.data_dir else { return Ok(()) };
        let path = dir.envelopes();
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(envelopes)?)?;
        std::fs::rename(tmp, path)
    }
}
