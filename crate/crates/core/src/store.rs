//! Embedded append-only telemetry store.
//!
//! Readings are keyed by `(machine, parameter, timestamp)`; a repeated key
//! replaces the earlier value. When the store is opened on a file, every
//! accepted append is written to the log before it becomes visible to
//! readers, so replaying the log reproduces the store.
//!
//! Log format (UTF-8, LF-terminated):
//!
//! ```text
//! pdm-log v1 zones=4
//! 1000,MNL15,machine_speed,100.0
//! ```

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{ParameterId, Schema, SchemaError};
use crate::textlog::fmt_f64;
pub use crate::textlog::is_valid_machine_id;

pub const LOG_MAGIC: &str = "pdm-log";
pub const LOG_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("rejected reading: {0}")]
    RejectedReading(String),
    #[error("storage error: {0}")]
    Storage(#[from] io::Error),
    #[error("invalid range: t0={t0} > t1={t1}")]
    InvalidRange { t0: i64, t1: i64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown machine `{0}`")]
    NotFound(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// One timestamped value of one machine parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub machine_id: String,
    #[serde(rename = "timestamp_ms")]
    pub timestamp: i64,
    pub parameter: ParameterId,
    pub value: f64,
}

impl SensorReading {
    pub fn new(machine_id: impl Into<String>, timestamp: i64, parameter: ParameterId, value: f64) -> Self {
        SensorReading {
            machine_id: machine_id.into(),
            timestamp,
            parameter,
            value,
        }
    }

    /// Checks the ingestion rules that do not depend on a schema.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !is_valid_machine_id(&self.machine_id) {
            return Err(format!("invalid machine id `{}`", self.machine_id));
        }
        if self.timestamp < 0 {
            return Err(format!("negative timestamp {}", self.timestamp));
        }
        if !self.value.is_finite() {
            return Err(format!("non-finite value {}", self.value));
        }
        Ok(())
    }
}

/// An aligned multivariate sample, one optional slot per parameter in
/// canonical order. Missing parameters are `None`, never zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFrame {
    #[serde(rename = "timestamp_ms")]
    pub timestamp: i64,
    pub values: Vec<Option<f64>>,
}

impl SeriesFrame {
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

/// One bucket of a resampled series; `value` is `None` for an empty bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub timestamp: i64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Last,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineStatus {
    Running,
    Down,
    Maintenance,
}

#[derive(Debug, Default)]
struct Inner {
    machines: BTreeMap<String, Vec<BTreeMap<i64, f64>>>,
    len: usize,
    log: Option<BufWriter<File>>,
}

/// Thread-safe telemetry store: one writer at a time, any number of readers,
/// and every query sees a state between two whole appends.
#[derive(Debug)]
pub struct TelemetryStore {
    schema: Schema,
    inner: RwLock<Inner>,
}

impl TelemetryStore {
    pub fn in_memory(schema: Schema) -> Self {
        TelemetryStore {
            schema,
            inner: RwLock::new(Inner::default()),
        }
    }

    /// Opens a durable store backed by the log at `path`, replaying it first
    /// if it exists. Subsequent appends are written through to the file.
    pub fn open(path: impl AsRef<Path>, schema: Schema) -> Result<Self> {
        let path = path.as_ref();
        let store = TelemetryStore::in_memory(schema);
        let exists = path.exists();
        if exists {
            store.load_log(path)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if !exists || file.metadata()?.len() == 0 {
            writeln!(file, "{}", header_line(schema))?;
            file.flush()?;
        }
        store.write().log = Some(BufWriter::new(file));
        Ok(store)
    }

    /// Builds an in-memory store from a log file, taking the zone count from
    /// its header.
    pub fn from_log(path: impl AsRef<Path>) -> Result<(Self, usize)> {
        let path = path.as_ref();
        let mut reader = BufReader::new(File::open(path)?);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let schema = parse_header(header.trim_end_matches(['\n', '\r']))?;
        let store = TelemetryStore::in_memory(schema);
        let n = store.load_log(path)?;
        Ok((store, n))
    }

    /// Schema declared in an existing log's header.
    pub fn log_schema(path: impl AsRef<Path>) -> Result<Schema> {
        let mut header = String::new();
        BufReader::new(File::open(path)?).read_line(&mut header)?;
        parse_header(header.trim_end_matches(['\n', '\r']))
    }

    pub fn schema(&self) -> Schema {
        self.schema
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }

    fn check(&self, reading: &SensorReading) -> Result<usize> {
        reading.validate().map_err(StoreError::RejectedReading)?;
        self.schema
            .slot(reading.parameter)
            .map_err(|e: SchemaError| StoreError::RejectedReading(e.to_string()))
    }

    /// Appends one reading and returns the number of distinct keys stored.
    pub fn append(&self, reading: SensorReading) -> Result<usize> {
        let slot = self.check(&reading)?;
        let mut inner = self.write();
        if let Some(log) = inner.log.as_mut() {
            writeln!(log, "{}", format_record(&reading))?;
            log.flush()?;
        }
        Ok(insert(&mut inner, self.schema, slot, reading))
    }

    /// Appends a batch under a single write lock. Invalid readings are
    /// skipped and reported by index; valid ones are stored.
    pub fn append_batch(
        &self,
        readings: impl IntoIterator<Item = SensorReading>,
    ) -> Result<(usize, Vec<(usize, StoreError)>)> {
        let mut rejected = Vec::new();
        let mut valid = Vec::new();
        for (i, r) in readings.into_iter().enumerate() {
            match self.check(&r) {
                Ok(slot) => valid.push((slot, r)),
                Err(e) => rejected.push((i, e)),
            }
        }
        let mut inner = self.write();
        if let Some(log) = inner.log.as_mut() {
            for (_, r) in &valid {
                writeln!(log, "{}", format_record(r))?;
            }
            log.flush()?;
        }
        let accepted = valid.len();
        for (slot, r) in valid {
            insert(&mut inner, self.schema, slot, r);
        }
        Ok((accepted, rejected))
    }

    pub fn len(&self) -> usize {
        self.read().len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn machines(&self) -> Vec<String> {
        self.read().machines.keys().cloned().collect()
    }

    pub fn contains_machine(&self, machine: &str) -> bool {
        self.read().machines.contains_key(machine)
    }

    /// Readings with `t0 <= timestamp < t1`, ascending by timestamp.
    pub fn query_range(
        &self,
        machine: &str,
        parameter: ParameterId,
        t0: i64,
        t1: i64,
    ) -> Result<Vec<SensorReading>> {
        if t0 > t1 {
            return Err(StoreError::InvalidRange { t0, t1 });
        }
        let slot = self
            .schema
            .slot(parameter)
            .map_err(|e| StoreError::InvalidArgument(e.to_string()))?;
        let inner = self.read();
        let Some(series) = inner.machines.get(machine) else {
            return Ok(Vec::new());
        };
        Ok(series[slot]
            .range(t0..t1)
            .map(|(&t, &v)| SensorReading::new(machine, t, parameter, v))
            .collect())
    }

    /// Most recent value of every parameter. The frame timestamp is the
    /// latest timestamp among the present slots.
    pub fn latest_frame(&self, machine: &str) -> Result<SeriesFrame> {
        let inner = self.read();
        let series = inner
            .machines
            .get(machine)
            .ok_or_else(|| StoreError::NotFound(machine.to_string()))?;
        let mut timestamp = i64::MIN;
        let values = series
            .iter()
            .map(|s| {
                s.last_key_value().map(|(&t, &v)| {
                    timestamp = timestamp.max(t);
                    v
                })
            })
            .collect();
        Ok(SeriesFrame { timestamp, values })
    }

    /// Earliest and latest timestamps recorded for a machine.
    pub fn extent(&self, machine: &str) -> Result<(i64, i64)> {
        let inner = self.read();
        let series = inner
            .machines
            .get(machine)
            .ok_or_else(|| StoreError::NotFound(machine.to_string()))?;
        let lo = series.iter().filter_map(|s| s.keys().next().copied()).min();
        let hi = series.iter().filter_map(|s| s.keys().next_back().copied()).max();
        match (lo, hi) {
            (Some(lo), Some(hi)) => Ok((lo, hi)),
            _ => Err(StoreError::NotFound(machine.to_string())),
        }
    }

    /// Resamples every parameter of `machine` onto the grid of multiples of
    /// `period` covering `[t0, t1)`, producing one frame per grid point.
    pub fn grid_frames(
        &self,
        machine: &str,
        t0: i64,
        t1: i64,
        period: i64,
        agg: Aggregation,
    ) -> Result<Vec<SeriesFrame>> {
        if period <= 0 {
            return Err(StoreError::InvalidArgument(format!("period {period} must be positive")));
        }
        if t0 > t1 {
            return Err(StoreError::InvalidRange { t0, t1 });
        }
        if !self.contains_machine(machine) {
            return Err(StoreError::NotFound(machine.to_string()));
        }
        if t0 == t1 {
            return Ok(Vec::new());
        }
        let first = t0.div_euclid(period);
        let last = (t1 - 1).div_euclid(period);
        let n = (last - first + 1) as usize;
        let mut frames: Vec<SeriesFrame> = (0..n)
            .map(|i| SeriesFrame {
                timestamp: (first + i as i64) * period,
                values: vec![None; self.schema.width()],
            })
            .collect();
        for (slot, parameter) in self.schema.parameters().into_iter().enumerate() {
            let lo = t0.max(first * period);
            let readings = self.query_range(machine, parameter, lo, t1)?;
            for point in resample(&readings, period, agg)? {
                let idx = (point.timestamp.div_euclid(period) - first) as usize;
                if idx < n {
                    frames[idx].values[slot] = point.value;
                }
            }
        }
        Ok(frames)
    }

    /// Grid frames over the machine's whole recorded extent.
    pub fn all_grid_frames(&self, machine: &str, period: i64, agg: Aggregation) -> Result<Vec<SeriesFrame>> {
        let (lo, hi) = self.extent(machine)?;
        self.grid_frames(machine, lo, hi + 1, period, agg)
    }

    /// Writes a compacted log with one line per stored key.
    pub fn save_log(&self, path: impl AsRef<Path>) -> Result<usize> {
        let inner = self.read();
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header_line(self.schema))?;
        let params = self.schema.parameters();
        let mut count = 0;
        for (machine, series) in &inner.machines {
            for (slot, points) in series.iter().enumerate() {
                for (&t, &v) in points {
                    writeln!(out, "{t},{machine},{},{}", params[slot], fmt_f64(v))?;
                    count += 1;
                }
            }
        }
        out.flush()?;
        Ok(count)
    }

    /// Merges every record of a log file into the store (later records win)
    /// and returns the number of records read.
    pub fn load_log(&self, path: impl AsRef<Path>) -> Result<usize> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(StoreError::Format("empty log file".into())),
        };
        let schema = parse_header(&header)?;
        if schema != self.schema {
            return Err(StoreError::Format(format!(
                "log has zones={}, store expects zones={}",
                schema.zones, self.schema.zones
            )));
        }
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let reading = parse_record(&line).map_err(|message| StoreError::Parse {
                line: line_no,
                message,
            })?;
            let slot = self.check(&reading).map_err(|e| StoreError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            records.push((slot, reading));
        }
        let count = records.len();
        let mut inner = self.write();
        for (slot, r) in records {
            insert(&mut inner, self.schema, slot, r);
        }
        Ok(count)
    }
}

fn insert(inner: &mut Inner, schema: Schema, slot: usize, r: SensorReading) -> usize {
    let series = inner
        .machines
        .entry(r.machine_id)
        .or_insert_with(|| vec![BTreeMap::new(); schema.width()]);
    if series[slot].insert(r.timestamp, r.value).is_none() {
        inner.len += 1;
    }
    inner.len
}

fn header_line(schema: Schema) -> String {
    format!("{LOG_MAGIC} {LOG_VERSION} zones={}", schema.zones)
}

fn parse_header(line: &str) -> Result<Schema> {
    let mut parts = line.split(' ');
    if parts.next() != Some(LOG_MAGIC) {
        return Err(StoreError::Format(format!("missing `{LOG_MAGIC}` header")));
    }
    match parts.next() {
        Some(LOG_VERSION) => {}
        Some(v) => return Err(StoreError::Format(format!("unsupported log version `{v}`"))),
        None => return Err(StoreError::Format("missing log version".into())),
    }
    let zones = parts
        .next()
        .and_then(|z| z.strip_prefix("zones="))
        .and_then(|z| z.parse::<u16>().ok())
        .ok_or_else(|| StoreError::Format("missing or bad `zones=` in header".into()))?;
    if parts.next().is_some() {
        return Err(StoreError::Format("trailing header fields".into()));
    }
    Ok(Schema::new(zones))
}

pub(crate) fn format_record(r: &SensorReading) -> String {
    format!("{},{},{},{}", r.timestamp, r.machine_id, r.parameter, fmt_f64(r.value))
}

pub(crate) fn parse_record(line: &str) -> std::result::Result<SensorReading, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let timestamp = fields[0]
        .parse::<i64>()
        .map_err(|e| format!("bad timestamp `{}`: {e}", fields[0]))?;
    let parameter = fields[2].parse::<ParameterId>().map_err(|e| e.to_string())?;
    let value = fields[3]
        .parse::<f64>()
        .map_err(|e| format!("bad value `{}`: {e}", fields[3]))?;
    Ok(SensorReading::new(fields[1], timestamp, parameter, value))
}

/// Buckets readings into `[b*period, (b+1)*period)` from the first to the
/// last occupied bucket. Empty buckets in between are emitted as gaps.
pub fn resample(series: &[SensorReading], period: i64, agg: Aggregation) -> Result<Vec<SeriesPoint>> {
    if period <= 0 {
        return Err(StoreError::InvalidArgument(format!("period {period} must be positive")));
    }
    let (Some(first), Some(last)) = (series.first(), series.last()) else {
        return Ok(Vec::new());
    };
    let b0 = first.timestamp.div_euclid(period);
    let b1 = last.timestamp.div_euclid(period).max(b0);
    let n = (b1 - b0 + 1) as usize;
    // (sum, count, last, max) per bucket
    let mut acc: Vec<Option<(f64, usize, f64, f64)>> = vec![None; n];
    for r in series {
        let b = r.timestamp.div_euclid(period) - b0;
        if b < 0 || b as usize >= n {
            continue;
        }
        let slot = &mut acc[b as usize];
        *slot = Some(match *slot {
            None => (r.value, 1, r.value, r.value),
            Some((s, c, _, m)) => (s + r.value, c + 1, r.value, m.max(r.value)),
        });
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(i, a)| SeriesPoint {
            timestamp: (b0 + i as i64) * period,
            value: a.map(|(s, c, l, m)| match agg {
                Aggregation::Mean => s / c as f64,
                Aggregation::Last => l,
                Aggregation::Max => m,
            }),
        })
        .collect())
}
