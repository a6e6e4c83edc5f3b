//! One TOML file configures every stage; each section falls back to its
//! defaults when omitted.
//!
//! ```toml
//! [sim]
//! machine_id = "MNL15"
//! zones = 4
//!
//! [pipeline]
//! window_len = 32
//!
//! [train]
//! epochs = 200
//!
//! [server]
//! listen_addr = "127.0.0.1:8080"
//! data_dir = "data"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::downtime::{OperatingEnvelope, DEFAULT_SUSTAIN_STEPS, DEFAULT_WARNING_LEAD_PERIODS};
use crate::forest::ForestConfig;
use crate::lstm::TrainConfig;
use crate::pipeline::{default_forest_config, PipelineConfig};
use crate::sim::SimConfig;

pub const ENV_LISTEN_ADDR: &str = "PDM_LISTEN_ADDR";
pub const ENV_DATA_DIR: &str = "PDM_DATA_DIR";
pub const ENV_MODEL_PATH: &str = "PDM_MODEL_PATH";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub listen_addr: String,
    pub data_dir: PathBuf,
    /// Trained model; forecasts answer "no trained model" when absent.
    pub model_path: Option<PathBuf>,
    pub warning_lead_periods: i64,
    /// Default forecast horizon in grid periods.
    pub horizon_steps: usize,
    /// Refresh hint handed to dashboard clients.
    pub poll_interval_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen_addr: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            model_path: None,
            warning_lead_periods: DEFAULT_WARNING_LEAD_PERIODS,
            horizon_steps: 60,
            poll_interval_ms: 2000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdmConfig {
    pub sim: SimConfig,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    /// Forest ensemble member; `enabled = false` trains the LSTM alone.
    pub forest: ForestSection,
    /// Defaults to the simulator's nominal band when omitted.
    pub envelope: Option<OperatingEnvelope>,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: ForestConfig,
}

impl Default for ForestSection {
    fn default() -> Self {
        ForestSection { enabled: true, config: default_forest_config() }
    }
}

impl PdmConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: PdmConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        PdmConfig::from_toml(&text).map_err(|message| ConfigError::Parse { path: path.into(), message })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.sim.validate().map_err(|e| e.to_string())?;
        self.pipeline.validate().map_err(|e| e.to_string())?;
        self.effective_envelope().validate(self.sim.schema()).map_err(|e| e.to_string())?;
        if self.server.warning_lead_periods < 0 {
            return Err("server.warning_lead_periods must be >= 0".into());
        }
        if self.server.horizon_steps == 0 {
            return Err("server.horizon_steps must be >= 1".into());
        }
        Ok(())
    }

    pub fn forest_config(&self) -> Option<&ForestConfig> {
        self.forest.enabled.then_some(&self.forest.config)
    }

    pub fn effective_envelope(&self) -> OperatingEnvelope {
        self.envelope
            .clone()
            .unwrap_or_else(|| self.sim.default_envelope(DEFAULT_SUSTAIN_STEPS))
    }

    /// Applies `PDM_LISTEN_ADDR`, `PDM_DATA_DIR` and `PDM_MODEL_PATH`.
    pub fn apply_env(&mut self) {
        self.apply_overrides(|k| std::env::var(k).ok());
    }

    pub fn apply_overrides(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_LISTEN_ADDR) {
            self.server.listen_addr = v;
        }
        if let Some(v) = get(ENV_DATA_DIR) {
            self.server.data_dir = v.into();
        }
        if let Some(v) = get(ENV_MODEL_PATH) {
            self.server.model_path = Some(v.into());
        }
    }
}

/// File layout of a data directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataDir(pub PathBuf);

impl DataDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        DataDir(path.into())
    }

    pub fn telemetry(&self) -> PathBuf {
        self.0.join("telemetry.log")
    }

    pub fn alerts(&self) -> PathBuf {
        self.0.join("alerts.log")
    }

    pub fn maintenance(&self) -> PathBuf {
        self.0.join("maintenance.log")
    }

    pub fn envelopes(&self) -> PathBuf {
        self.0.join("envelopes.json")
    }
}
