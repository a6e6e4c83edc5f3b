//! Maintenance event log.
//!
//! ```text
//! pdm-maint v1
//! <timestamp_ms>,<machine_id>,<performed_by>,<note>
//! ```
//!
//! Free-text fields are escaped (`\,`, `\\`, `\n`, `\r`).

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DowntimeError, Result};
use crate::textlog::{escape, is_valid_machine_id, split_escaped};

pub const MAINTENANCE_LOG_HEADER: &str = "pdm-maint v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceEvent {
    pub machine_id: String,
    pub timestamp_ms: i64,
    pub note: String,
    pub performed_by: String,
}

#[derive(Debug, Default)]
pub struct MaintenanceLog {
    events: Vec<MaintenanceEvent>,
    log: Option<File>,
}

impl MaintenanceLog {
    pub fn in_memory() -> Self {
        MaintenanceLog::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut out = MaintenanceLog::default();
        let exists = path.exists() && std::fs::metadata(path)?.len() > 0;
        if exists {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                let err = |message: String| DowntimeError::Parse { line: i + 1, message };
                if i == 0 {
                    if line != MAINTENANCE_LOG_HEADER {
                        return Err(err(format!("expected header `{MAINTENANCE_LOG_HEADER}`")));
                    }
                    continue;
                }
                if line.is_empty() {
                    continue;
                }
                let fields = split_escaped(&line).map_err(err)?;
                let [ts, machine, by, note] = fields.as_slice() else {
                    return Err(err(format!("expected 4 fields, got {}", fields.len())));
                };
                out.events.push(MaintenanceEvent {
                    machine_id: machine.clone(),
                    timestamp_ms: ts.parse().map_err(|_| err(format!("bad timestamp `{ts}`")))?,
                    note: note.clone(),
                    performed_by: by.clone(),
                });
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if !exists {
            writeln!(file, "{MAINTENANCE_LOG_HEADER}")?;
        }
        out.log = Some(file);
        Ok(out)
    }

    /// Validates and durably appends an event.
    pub fn append(&mut self, event: MaintenanceEvent, now: i64) -> Result<()> {
        if !is_valid_machine_id(&event.machine_id) {
            return Err(DowntimeError::InvalidArgument(format!("invalid machine id `{}`", event.machine_id)));
        }
        if event.timestamp_ms < 0 || event.timestamp_ms > now {
            return Err(DowntimeError::InvalidArgument(format!(
                "maintenance timestamp {} must lie in 0..={now}",
                event.timestamp_ms
            )));
        }
        if event.note.trim().is_empty() {
            return Err(DowntimeError::InvalidArgument("note must not be empty".into()));
        }
        if let Some(f) = self.log.as_mut() {
            writeln!(
                f,
                "{},{},{},{}",
                event.timestamp_ms,
                event.machine_id,
                escape(&event.performed_by),
                escape(&event.note)
            )?;
            f.flush()?;
        }
        self.events.push(event);
        Ok(())
    }

    pub fn events(&self, machine: &str) -> Vec<MaintenanceEvent> {
        self.events.iter().filter(|e| e.machine_id == machine).cloned().collect()
    }

    /// Sorted, deduplicated event timestamps of a machine.
    pub fn boundaries(&self, machine: &str) -> Vec<i64> {
        let mut b: Vec<i64> = self
            .events
            .iter()
            .filter(|e| e.machine_id == machine)
            .map(|e| e.timestamp_ms)
            .collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}
