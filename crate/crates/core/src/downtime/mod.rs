//! Downtime prediction: operating envelopes, forecast-space violation
//! search, alerting and maintenance bookkeeping.
//!
//! A machine is considered down once any parameter leaves its envelope for
//! `sustain_steps` consecutive grid steps. The same rule is applied to
//! observed history (critical alerts) and to model forecasts (downtime
//! predictions and warning alerts).

mod alerts;
mod control;
mod maintenance;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ParameterId, Schema};
use crate::store::SeriesFrame;

pub use alerts::{Alert, AlertChange, AlertManager, AlertSeverity, AlertState, ALERT_LOG_HEADER};
pub use control::{Controller, DEFAULT_WARNING_LEAD_PERIODS};
pub use maintenance::{MaintenanceEvent, MaintenanceLog, MAINTENANCE_LOG_HEADER};

#[derive(Debug, Error)]
pub enum DowntimeError {
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("insufficient history: need {needed} complete frames, have {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("{0} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, DowntimeError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBounds {
    pub parameter: ParameterId,
    pub lower: f64,
    pub upper: f64,
}

impl ParameterBounds {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

/// Per-parameter safe ranges in raw units. Parameters without bounds are
/// unconstrained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingEnvelope {
    pub sustain_steps: usize,
    pub bounds: Vec<ParameterBounds>,
}

pub const DEFAULT_SUSTAIN_STEPS: usize = 3;

impl OperatingEnvelope {
    pub fn new(sustain_steps: usize, bounds: Vec<ParameterBounds>) -> Result<Self> {
        let env = OperatingEnvelope { sustain_steps, bounds };
        env.check()?;
        Ok(env)
    }

    /// Structural checks that do not need a schema.
    pub fn check(&self) -> Result<()> {
        if self.sustain_steps == 0 {
            return Err(DowntimeError::InvalidEnvelope("sustain_steps must be >= 1".into()));
        }
        for (i, b) in self.bounds.iter().enumerate() {
            if !b.lower.is_finite() || !b.upper.is_finite() {
                return Err(DowntimeError::InvalidEnvelope(format!("{}: bounds must be finite", b.parameter)));
            }
            if b.lower >= b.upper {
                return Err(DowntimeError::InvalidEnvelope(format!(
                    "{}: lower {} must be below upper {}",
                    b.parameter, b.lower, b.upper
                )));
            }
            if self.bounds[..i].iter().any(|o| o.parameter == b.parameter) {
                return Err(DowntimeError::InvalidEnvelope(format!("{} listed twice", b.parameter)));
            }
        }
        Ok(())
    }

    pub fn validate(&self, schema: Schema) -> Result<()> {
        self.check()?;
        for b in &self.bounds {
            schema
                .slot(b.parameter)
                .map_err(|e| DowntimeError::InvalidEnvelope(e.to_string()))?;
        }
        Ok(())
    }

    pub fn get(&self, parameter: ParameterId) -> Option<&ParameterBounds> {
        self.bounds.iter().find(|b| b.parameter == parameter)
    }

    /// Bounds laid out by frame slot.
    pub fn by_slot(&self, schema: Schema) -> Result<Vec<Option<ParameterBounds>>> {
        self.validate(schema)?;
        let mut out = vec![None; schema.width()];
        for b in &self.bounds {
            out[schema.slot(b.parameter).expect("validated")] = Some(*b);
        }
        Ok(out)
    }

    /// Replaces (or adds) the bounds of one parameter.
    pub fn set(&mut self, bounds: ParameterBounds) {
        match self.bounds.iter_mut().find(|b| b.parameter == bounds.parameter) {
            Some(b) => *b = bounds,
            None => self.bounds.push(bounds),
        }
    }
}

/// A parameter that has been out of bounds for at least `sustain_steps`
/// consecutive frames up to and including the latest one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub parameter: ParameterId,
    pub onset_ms: i64,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Active violations at the end of `frames`. A missing value breaks a run.
pub fn evaluate_envelope(frames: &[SeriesFrame], envelope: &OperatingEnvelope, schema: Schema) -> Result<Vec<Violation>> {
    let slots = envelope.by_slot(schema)?;
    let mut out = Vec::new();
    for (slot, bounds) in slots.iter().enumerate() {
        let Some(b) = bounds else { continue };
        let mut run = 0;
        for f in frames.iter().rev() {
            match f.values.get(slot).copied().flatten() {
                Some(v) if !b.contains(v) => run += 1,
                _ => break,
            }
        }
        if run >= envelope.sustain_steps {
            let onset = &frames[frames.len() - run];
            let last = frames.last().expect("run > 0");
            out.push(Violation {
                parameter: b.parameter,
                onset_ms: onset.timestamp,
                value: last.values[slot].expect("counted as out of bounds"),
                lower: b.lower,
                upper: b.upper,
            });
        }
    }
    Ok(out)
}

/// Start of the first run of at least `sustain` consecutive out-of-bounds
/// steps of each parameter along a trajectory (0-based step indices).
pub fn sustained_exits(trajectory: &[Vec<f64>], slots: &[Option<ParameterBounds>], sustain: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (slot, bounds) in slots.iter().enumerate() {
        let Some(b) = bounds else { continue };
        let mut run = 0;
        for (k, row) in trajectory.iter().enumerate() {
            if b.contains(row[slot]) {
                run = 0;
            } else {
                run += 1;
                if run >= sustain {
                    out.push((slot, k + 1 - run));
                    break;
                }
            }
        }
    }
    out
}

/// Anything that can roll a machine's recent history forward.
pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;
    /// Complete frames of history needed to forecast.
    fn history_len(&self) -> usize;
    fn features(&self) -> usize;
    /// Forecasts `steps` future frames in raw units.
    fn forecast(&self, history: &[Vec<f64>], steps: usize) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributingParameter {
    pub parameter: ParameterId,
    /// 1-based forecast step at which the parameter's sustained exit begins.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub timestamp_ms: i64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DowntimeForecast {
    pub machine_id: String,
    pub generated_at_ms: i64,
    pub predicted_down_at_ms: Option<i64>,
    pub lead_time_ms: Option<i64>,
    pub confidence: f64,
    pub contributing_parameters: Vec<ContributingParameter>,
    pub horizon_steps: usize,
    pub period_ms: i64,
    /// Primary model trajectory, one point per forecast step.
    pub forecast: Vec<ForecastPoint>,
}

impl DowntimeForecast {
    pub fn is_consistent(&self) -> bool {
        let present = [
            self.predicted_down_at_ms.is_some(),
            self.lead_time_ms.is_some(),
            !self.contributing_parameters.is_empty(),
        ];
        present.iter().all(|&p| p == present[0])
            && (0.0..=1.0).contains(&self.confidence)
            && self.predicted_down_at_ms.is_none_or(|t| t >= self.generated_at_ms)
    }
}

/// Trailing complete rows of `frames`, oldest first.
pub fn trailing_complete(frames: &[SeriesFrame], n: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = frames
        .iter()
        .rev()
        .take_while(|f| f.is_complete())
        .take(n)
        .map(|f| f.values.iter().map(|v| v.expect("complete")).collect())
        .collect();
    rows.reverse();
    rows
}

/// Rolls every ensemble member `horizon` steps past the latest frame.
///
/// The first member is the primary model: its trajectory decides the
/// predicted down time and contributing parameters. Confidence is the
/// fraction of members whose yes/no verdict on downtime within the horizon
/// agrees with the primary's.
pub fn forecast_downtime(
    machine_id: &str,
    frames: &[SeriesFrame],
    period_ms: i64,
    members: &[&dyn Forecaster],
    envelope: &OperatingEnvelope,
    schema: Schema,
    horizon: usize,
) -> Result<DowntimeForecast> {
    if horizon == 0 {
        return Err(DowntimeError::InvalidArgument("horizon_steps must be >= 1".into()));
    }
    if period_ms <= 0 {
        return Err(DowntimeError::InvalidArgument("period must be positive".into()));
    }
    let Some(primary) = members.first() else {
        return Err(DowntimeError::InvalidArgument("no forecasters".into()));
    };
    let slots = envelope.by_slot(schema)?;
    let generated_at = frames
        .last()
        .map(|f| f.timestamp)
        .ok_or(DowntimeError::InsufficientHistory {
            needed: primary.history_len(),
            got: 0,
        })?;

    let mut verdicts = Vec::with_capacity(members.len());
    let mut primary_traj = Vec::new();
    let mut primary_exits = Vec::new();
    for (i, m) in members.iter().enumerate() {
        if m.features() != schema.width() {
            return Err(DowntimeError::Dimension {
                expected: schema.width(),
                got: m.features(),
            });
        }
        let need = m.history_len();
        let history = trailing_complete(frames, need);
        if history.len() < need {
            return Err(DowntimeError::InsufficientHistory { needed: need, got: history.len() });
        }
        let traj = m.forecast(&history, horizon)?;
        let exits = sustained_exits(&traj, &slots, envelope.sustain_steps);
        verdicts.push(!exits.is_empty());
        if i == 0 {
            primary_traj = traj;
            primary_exits = exits;
        }
    }

    let down_step = primary_exits.iter().map(|&(_, k)| k).min();
    let predicted = down_step.map(|k| generated_at + (k as i64 + 1) * period_ms);
    let mut contributing: Vec<ContributingParameter> = primary_exits
        .iter()
        .map(|&(slot, k)| ContributingParameter {
            parameter: schema.parameter(slot).expect("slot from schema"),
            step: k + 1,
        })
        .collect();
    contributing.sort_by_key(|c| (c.step, c.parameter));
    let agree = verdicts.iter().filter(|&&v| v == verdicts[0]).count();

    Ok(DowntimeForecast {
        machine_id: machine_id.to_string(),
        generated_at_ms: generated_at,
        predicted_down_at_ms: predicted,
        lead_time_ms: predicted.map(|t| t - generated_at),
        confidence: agree as f64 / verdicts.len() as f64,
        contributing_parameters: contributing,
        horizon_steps: horizon,
        period_ms,
        forecast: primary_traj
            .into_iter()
            .enumerate()
            .map(|(k, values)| ForecastPoint {
                timestamp_ms: generated_at + (k as i64 + 1) * period_ms,
                values,
            })
            .collect(),
    })
}

/// Binary fault labels for classification forests: `1.0` when a sustained
/// exit of the envelope begins within `lookahead` steps after each window.
pub fn violation_labels(
    frames: &[SeriesFrame],
    origins: &[usize],
    window_len: usize,
    lookahead: usize,
    envelope: &OperatingEnvelope,
    schema: Schema,
) -> Result<Vec<f64>> {
    let slots = envelope.by_slot(schema)?;
    let rows: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| f.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
        .collect();
    Ok(origins
        .iter()
        .map(|&o| {
            let start = (o + window_len).min(rows.len());
            let end = (start + lookahead + envelope.sustain_steps - 1).min(rows.len());
            let exits = sustained_exits(&rows[start..end], &slots, envelope.sustain_steps);
            if exits.iter().any(|&(_, k)| k < lookahead) {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}
