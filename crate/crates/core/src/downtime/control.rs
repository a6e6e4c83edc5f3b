use std::collections::BTreeMap;

use super::{
    evaluate_envelope, Alert, AlertChange, AlertManager, AlertState, DowntimeError, DowntimeForecast,
    MaintenanceEvent, MaintenanceLog, OperatingEnvelope, Result, Violation,
};
use crate::schema::Schema;
use crate::store::{MachineStatus, SeriesFrame};

/// Warning alerts fire when predicted downtime is closer than this many grid periods.
pub const DEFAULT_WARNING_LEAD_PERIODS: i64 = 30;

/// Operator-facing state of every machine: envelopes, alerts, maintenance
/// history and status. Callers serialize access (one command at a time).
#[derive(Debug)]
pub struct Controller {
    schema: Schema,
    default_envelope: OperatingEnvelope,
    envelopes: BTreeMap<String, OperatingEnvelope>,
    alerts: AlertManager,
    maintenance: MaintenanceLog,
    status: BTreeMap<String, MachineStatus>,
    warning_lead_ms: i64,
}

impl Controller {
    pub fn new(
        schema: Schema,
        default_envelope: OperatingEnvelope,
        alerts: AlertManager,
        maintenance: MaintenanceLog,
        warning_lead_ms: i64,
    ) -> Result<Self> {
        default_envelope.validate(schema)?;
        Ok(Controller {
            schema,
            default_envelope,
            envelopes: BTreeMap::new(),
            alerts,
            maintenance,
            status: BTreeMap::new(),
            warning_lead_ms,
        })
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    pub fn warning_lead_ms(&self) -> i64 {
        self.warning_lead_ms
    }

    pub fn envelope(&self, machine: &str) -> &OperatingEnvelope {
        self.envelopes.get(machine).unwrap_or(&self.default_envelope)
    }

    pub fn envelopes(&self) -> &BTreeMap<String, OperatingEnvelope> {
        &self.envelopes
    }

    /// Atomically replaces a machine's envelope.
    pub fn set_envelope(&mut self, machine: &str, envelope: OperatingEnvelope) -> Result<()> {
        envelope.validate(self.schema)?;
        self.envelopes.insert(machine.to_string(), envelope);
        Ok(())
    }

    pub fn status(&self, machine: &str) -> MachineStatus {
        self.status.get(machine).copied().unwrap_or(MachineStatus::Running)
    }

    /// Checks recent grid frames against the envelope and updates critical alerts.
    pub fn observe(&mut self, machine: &str, frames: &[SeriesFrame], now: i64) -> Result<(Vec<Violation>, Option<AlertChange>)> {
        let violations = evaluate_envelope(frames, self.envelope(machine), self.schema)?;
        let change = self.alerts.on_violations(machine, &violations, now)?;
        let status = if violations.is_empty() {
            MachineStatus::Running
        } else {
            MachineStatus::Down
        };
        self.status.insert(machine.to_string(), status);
        Ok((violations, change))
    }

    pub fn apply_forecast(&mut self, forecast: &DowntimeForecast, now: i64) -> Result<Option<AlertChange>> {
        self.alerts.on_forecast(forecast, self.warning_lead_ms, now)
    }

    pub fn acknowledge(&mut self, id: u64, now: i64) -> Result<Alert> {
        self.alerts.acknowledge(id, now)
    }

    pub fn alerts(&self, machine: &str, state: Option<AlertState>) -> Vec<Alert> {
        self.alerts.list(machine, state)
    }

    pub fn alert(&self, id: u64) -> Option<&Alert> {
        self.alerts.get(id)
    }

    /// Logs the event, resolves the machine's active alerts and returns their ids.
    /// `known` says whether the machine exists in the telemetry store.
    pub fn record_maintenance(&mut self, event: MaintenanceEvent, known: bool, now: i64) -> Result<Vec<u64>> {
        if !known {
            return Err(DowntimeError::NotFound(format!("machine `{}`", event.machine_id)));
        }
        let machine = event.machine_id.clone();
        self.maintenance.append(event, now)?;
        self.status.insert(machine.clone(), MachineStatus::Maintenance);
        let resolved = self.alerts.resolve_machine(&machine, now)?;
        self.status.insert(machine, MachineStatus::Running);
        Ok(resolved)
    }

    pub fn maintenance_events(&self, machine: &str) -> Vec<MaintenanceEvent> {
        self.maintenance.events(machine)
    }

    /// Maintenance timestamps that windows must not span.
    pub fn boundaries(&self, machine: &str) -> Vec<i64> {
        self.maintenance.boundaries(machine)
    }
}
