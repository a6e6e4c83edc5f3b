//! Core library for tubing-machine predictive maintenance.
//!
//! The crate is organized the way data flows through the system:
//!
//! * [`store`] keeps raw [`SensorReading`]s in an embedded append-only log.
//! * [`preprocess`] cleans, normalizes and windows grid-aligned frames.
//! * [`lstm`] and [`forest`] are the two forecaster families.
//! * [`pipeline`] ties a trained model to the feature transform it expects.
//! * [`downtime`] turns forecasts and an [`OperatingEnvelope`] into downtime
//!   predictions, alerts and maintenance bookkeeping.
//! * [`sim`] generates deterministic synthetic telemetry with known failure times.
//! * [`config`] reads the single TOML file the tools share.

pub mod config;
pub mod downtime;
pub mod forest;
pub mod lstm;
pub mod pipeline;
pub mod preprocess;
pub mod schema;
pub mod sim;
pub mod store;
mod textlog;

pub use config::{DataDir, PdmConfig, ServerConfig};
pub use downtime::{
    Alert, AlertSeverity, AlertState, Controller, DowntimeForecast, MaintenanceEvent, OperatingEnvelope,
    ParameterBounds, Violation,
};
pub use forest::{Forest, ForestConfig, Task};
pub use lstm::{LstmParams, LstmState, TrainConfig, TrainReport};
pub use pipeline::{FeaturePipeline, ModelBundle, PipelineConfig};
pub use preprocess::{CorrelationMatrix, NormalizationStats, WindowedDataset};
pub use schema::{ParameterId, Schema};
pub use sim::SimConfig;
pub use store::{MachineStatus, SensorReading, SeriesFrame, TelemetryStore};
