//! Alert state machine with an append-only event log.
//!
//! ```text
//! pdm-alerts v1
//! open,<alert as escaped JSON>
//! ack,<id>,<timestamp_ms>
//! resolve,<id>,<timestamp_ms>
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DowntimeError, DowntimeForecast, Result, Violation};
use crate::textlog::{escape, split_escaped};

pub const ALERT_LOG_HEADER: &str = "pdm-alerts v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertSeverity {
    /// Downtime forecast inside the warning lead time.
    Warning,
    /// Sustained envelope violation in observed data.
    Critical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertState {
    Open,
    Acknowledged,
    Resolved,
}

impl AlertState {
    pub fn is_active(self) -> bool {
        self != AlertState::Resolved
    }

    /// Legal transitions: open → acknowledged → resolved, open → resolved.
    pub fn can_become(self, next: AlertState) -> bool {
        matches!(
            (self, next),
            (AlertState::Open, AlertState::Acknowledged)
                | (AlertState::Open, AlertState::Resolved)
                | (AlertState::Acknowledged, AlertState::Resolved)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub id: u64,
    pub machine_id: String,
    pub severity: AlertSeverity,
    pub created_at_ms: i64,
    pub updated_at_ms: i64,
    pub state: AlertState,
    pub message: String,
    pub forecast: Option<DowntimeForecast>,
    pub violations: Vec<Violation>,
}

/// What an evaluation did to the alert set.
#[derive(Debug, Clone, PartialEq)]
pub enum AlertChange {
    Opened(u64),
    Resolved(u64),
}

#[derive(Debug, Default)]
pub struct AlertManager {
    alerts: Vec<Alert>,
    log: Option<File>,
}

impl AlertManager {
    pub fn in_memory() -> Self {
        AlertManager::default()
    }

    /// Opens (or creates) a durable alert log and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut mgr = AlertManager::default();
        let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
        if exists {
            mgr.replay(BufReader::new(File::open(path)?))?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if !exists {
            writeln!(file, "{ALERT_LOG_HEADER}")?;
        }
        mgr.log = Some(file);
        Ok(mgr)
    }

    fn replay(&mut self, reader: impl BufRead) -> Result<()> {
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            let err = |message: String| DowntimeError::Parse { line: n, message };
            if n == 1 {
                if line != ALERT_LOG_HEADER {
                    return Err(err(format!("expected header `{ALERT_LOG_HEADER}`")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields = split_escaped(&line).map_err(err)?;
            match fields.as_slice() {
                [kind, json] if kind == "open" => {
                    let alert: Alert = serde_json::from_str(json).map_err(|e| err(e.to_string()))?;
                    if self.get(alert.id).is_some() {
                        return Err(err(format!("duplicate alert id {}", alert.id)));
                    }
                    self.alerts.push(alert);
                }
                [kind, id, ts] => {
                    let next = match kind.as_str() {
                        "ack" => AlertState::Acknowledged,
                        "resolve" => AlertState::Resolved,
                        other => return Err(err(format!("unknown event `{other}`"))),
                    };
                    let id: u64 = id.parse().map_err(|_| err(format!("bad id `{id}`")))?;
                    let ts: i64 = ts.parse().map_err(|_| err(format!("bad timestamp `{ts}`")))?;
                    let alert = self
                        .alerts
                        .iter_mut()
                        .find(|a| a.id == id)
                        .ok_or_else(|| err(format!("unknown alert {id}")))?;
                    if !alert.state.can_become(next) {
                        return Err(err(format!("illegal transition {:?} -> {next:?}", alert.state)));
                    }
                    alert.state = next;
                    alert.updated_at_ms = ts;
                }
                _ => return Err(err("malformed event".into())),
            }
        }
        Ok(())
    }

    fn record(&mut self, line: String) -> Result<()> {
        if let Some(f) = self.log.as_mut() {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&Alert> {
        self.alerts.iter().find(|a| a.id == id)
    }

    pub fn all(&self) -> &[Alert] {
        &self.alerts
    }

    /// Alerts of one machine, optionally filtered by state, oldest first.
    pub fn list(&self, machine: &str, state: Option<AlertState>) -> Vec<Alert> {
        self.alerts
            .iter()
            .filter(|a| a.machine_id == machine && state.is_none_or(|s| a.state == s))
            .cloned()
            .collect()
    }

    fn active(&self, machine: &str, severity: AlertSeverity) -> Option<u64> {
        self.alerts
            .iter()
            .find(|a| a.machine_id == machine && a.severity == severity && a.state.is_active())
            .map(|a| a.id)
    }

    fn open_alert(&mut self, mut alert: Alert) -> Result<u64> {
        alert.id = self.alerts.last().map_or(1, |a| a.id + 1);
        let json = serde_json::to_string(&alert).map_err(|e| DowntimeError::Model(e.to_string()))?;
        self.record(format!("open,{}", escape(&json)))?;
        let id = alert.id;
        self.alerts.push(alert);
        Ok(id)
    }

    fn transition(&mut self, id: u64, next: AlertState, now: i64) -> Result<()> {
        let kind = match next {
            AlertState::Acknowledged => "ack",
            AlertState::Resolved => "resolve",
            AlertState::Open => unreachable!("alerts never reopen"),
        };
        self.record(format!("{kind},{id},{now}"))?;
        let alert = self.alerts.iter_mut().find(|a| a.id == id).expect("caller checked id");
        alert.state = next;
        alert.updated_at_ms = now;
        Ok(())
    }

    /// Opens a critical alert for a new violation, or resolves the active one
    /// once the machine is back inside its envelope.
    pub fn on_violations(&mut self, machine: &str, violations: &[Violation], now: i64) -> Result<Option<AlertChange>> {
        let active = self.active(machine, AlertSeverity::Critical);
        match (active, violations.is_empty()) {
            (None, false) => {
                let names: Vec<String> = violations.iter().map(|v| v.parameter.to_string()).collect();
                let id = self.open_alert(Alert {
                    id: 0,
                    machine_id: machine.to_string(),
                    severity: AlertSeverity::Critical,
                    created_at_ms: now,
                    updated_at_ms: now,
                    state: AlertState::Open,
                    message: format!("operating envelope violated: {}", names.join(", ")),
                    forecast: None,
                    violations: violations.to_vec(),
                })?;
                Ok(Some(AlertChange::Opened(id)))
            }
            (Some(id), true) => {
                self.transition(id, AlertState::Resolved, now)?;
                Ok(Some(AlertChange::Resolved(id)))
            }
            _ => Ok(None),
        }
    }

    /// Opens a warning when predicted downtime is closer than
    /// `warning_lead_ms`, and resolves it when the prediction recedes.
    pub fn on_forecast(&mut self, forecast: &DowntimeForecast, warning_lead_ms: i64, now: i64) -> Result<Option<AlertChange>> {
        let machine = forecast.machine_id.as_str();
        let condition = forecast.lead_time_ms.is_some_and(|l| l < warning_lead_ms);
        match (self.active(machine, AlertSeverity::Warning), condition) {
            (None, true) => {
                let names: Vec<String> = forecast
                    .contributing_parameters
                    .iter()
                    .map(|c| c.parameter.to_string())
                    .collect();
                let id = self.open_alert(Alert {
                    id: 0,
                    machine_id: machine.to_string(),
                    severity: AlertSeverity::Warning,
                    created_at_ms: now,
                    updated_at_ms: now,
                    state: AlertState::Open,
                    message: format!(
                        "downtime predicted in {} ms ({})",
                        forecast.lead_time_ms.unwrap_or_default(),
                        names.join(", ")
                    ),
                    forecast: Some(forecast.clone()),
                    violations: Vec::new(),
                })?;
                Ok(Some(AlertChange::Opened(id)))
            }
            (Some(id), false) => {
                self.transition(id, AlertState::Resolved, now)?;
                Ok(Some(AlertChange::Resolved(id)))
            }
            _ => Ok(None),
        }
    }

    /// Open → acknowledged; acknowledging again is a no-op. Resolved alerts
    /// cannot be acknowledged.
    pub fn acknowledge(&mut self, id: u64, now: i64) -> Result<Alert> {
        let state = self
            .get(id)
            .ok_or_else(|| DowntimeError::NotFound(format!("alert {id}")))?
            .state;
        match state {
            AlertState::Open => self.transition(id, AlertState::Acknowledged, now)?,
            AlertState::Acknowledged => {}
            AlertState::Resolved => return Err(DowntimeError::Conflict(format!("alert {id} is already resolved"))),
        }
        Ok(self.get(id).expect("exists").clone())
    }

    /// Resolves every active alert of a machine; returns their ids.
    pub fn resolve_machine(&mut self, machine: &str, now: i64) -> Result<Vec<u64>> {
        let ids: Vec<u64> = self
            .alerts
            .iter()
            .filter(|a| a.machine_id == machine && a.state.is_active())
            .map(|a| a.id)
            .collect();
        for &id in &ids {
            self.transition(id, AlertState::Resolved, now)?;
        }
        Ok(ids)
    }
}
