use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use pdm_core::config::DataDir;
use pdm_core::downtime::{forecast_downtime, MaintenanceEvent, MaintenanceLog, OperatingEnvelope};
use pdm_core::pipeline::{evaluate_bundle, recent_frames, sidecar_paths, train_bundle, ModelBundle};
use pdm_core::sim::generate;
use pdm_core::{PdmConfig, SensorReading, SeriesFrame, TelemetryStore};
use pdm_server::{AppState, IngestResponse};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input files, configs or data.
    #[error("{0}")]
    Data(String),
    /// Anything that failed while running.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Milliseconds from `1500`, `1500ms`, `90s`, `30m` or `2h`.
pub fn parse_duration(s: &str) -> std::result::Result<i64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: i64 = num.parse().map_err(|_| format!("invalid duration `{s}`"))?;
    let scale = match unit {
        "" | "ms" => 1,
        "s" => 1000,
        "m" => 60_000,
        "h" => 3_600_000,
        _ => return Err(format!("unknown duration unit `{unit}` (ms, s, m, h)")),
    };
    n.checked_mul(scale).ok_or_else(|| format!("duration `{s}` overflows"))
}

fn load_config(path: Option<&Path>) -> Result<PdmConfig> {
    match path {
        Some(p) => PdmConfig::load(p).map_err(data),
        None => Ok(PdmConfig::default()),
    }
}

/// Writes pretty JSON to stdout; a closed pipe (`| head`) is not an error.
fn print_json(value: &impl Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).map_err(runtime)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime(e)),
        _ => Ok(()),
    }
}

fn open_store(dir: &DataDir) -> Result<TelemetryStore> {
    let path = dir.telemetry();
    if !path.exists() {
        return Err(CliError::Data(format!("{} does not exist", path.display())));
    }
    let (store, _) = TelemetryStore::from_log(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(store)
}

/// Maintenance timestamps per machine, if the data directory has a log.
fn boundaries(dir: &DataDir, machines: &[String]) -> Result<Vec<Vec<i64>>> {
    let path = dir.maintenance();
    if !path.exists() {
        return Ok(vec![Vec::new(); machines.len()]);
    }
    let log = MaintenanceLog::open(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    Ok(machines.iter().map(|m| log.boundaries(m)).collect())
}

fn machine_grids(store: &TelemetryStore, period: i64, agg: pdm_core::store::Aggregation) -> Result<(Vec<String>, Vec<Vec<SeriesFrame>>)> {
    let machines = store.machines();
    if machines.is_empty() {
        return Err(CliError::Data("telemetry log holds no readings".into()));
    }
    let raw = machines
        .iter()
        .map(|m| store.all_grid_frames(m, period, agg).map_err(data))
        .collect::<Result<Vec<_>>>()?;
    Ok((machines, raw))
}

#[derive(Debug, Serialize)]
struct SimulateSummary {
    machine_id: String,
    out: PathBuf,
    readings: usize,
    frames: usize,
    start_ms: i64,
    end_ms: i64,
    /// Sustained exit of the configured envelope in the noise-free signal.
    ground_truth_down_at_ms: Option<i64>,
}

pub fn simulate(config: Option<&Path>, duration: i64, out: &Path, force: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let envelope = cfg.effective_envelope();
    let run = generate(&cfg.sim, duration, Some(&envelope)).map_err(data)?;
    let dir = DataDir::new(out);
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    for path in [dir.telemetry(), dir.maintenance()] {
        if path.exists() {
            if !force {
                return Err(CliError::Data(format!("{} exists (use --force to replace)", path.display())));
            }
            std::fs::remove_file(&path).map_err(runtime)?;
        }
    }
    let store = TelemetryStore::open(dir.telemetry(), cfg.sim.schema()).map_err(runtime)?;
    let (accepted, rejected) = store.append_batch(run.readings.iter().cloned()).map_err(runtime)?;
    if !rejected.is_empty() {
        return Err(CliError::Runtime(format!("{} simulated readings rejected", rejected.len())));
    }
    let end = cfg.sim.start_ms + duration;
    let resets: Vec<i64> = cfg.sim.maintenance_resets.iter().copied().filter(|&r| r < end).collect();
    if !resets.is_empty() {
        let mut log = MaintenanceLog::open(dir.maintenance()).map_err(runtime)?;
        for ts in resets {
            let event = MaintenanceEvent {
                machine_id: cfg.sim.machine_id.clone(),
                timestamp_ms: ts,
                note: "simulated maintenance reset".into(),
                performed_by: "simulator".into(),
            };
            log.append(event, i64::MAX).map_err(data)?;
        }
    }
    print_json(&SimulateSummary {
        machine_id: cfg.sim.machine_id.clone(),
        out: out.to_path_buf(),
        readings: accepted,
        frames: run.frames.len(),
        start_ms: cfg.sim.start_ms,
        end_ms: end,
        ground_truth_down_at_ms: run.ground_truth_down_at,
    })
}

/// All readings of a log in time order (ties by machine, then parameter).
fn chronological(store: &TelemetryStore) -> Result<Vec<SensorReading>> {
    let mut out = Vec::with_capacity(store.len());
    for m in store.machines() {
        for p in store.schema().parameters() {
            out.extend(store.query_range(&m, p, i64::MIN, i64::MAX).map_err(data)?);
        }
    }
    out.sort_by(|a, b| (a.timestamp, &a.machine_id, a.parameter).cmp(&(b.timestamp, &b.machine_id, b.parameter)));
    Ok(out)
}

pub fn replay(file: &Path, target: &str, rate: f64, batch: usize) -> Result<()> {
    if !(rate >= 0.0 && rate.is_finite()) || batch == 0 {
        return Err(CliError::Data("rate must be >= 0 and batch >= 1".into()));
    }
    let (source, _) = TelemetryStore::from_log(file).map_err(|e| data(format!("{}: {e}", file.display())))?;
    let readings = chronological(&source)?;
    let started = Instant::now();
    let pace = |sent: usize| {
        if rate > 0.0 {
            let due = Duration::from_secs_f64(sent as f64 / rate);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    };
    let batch = if rate > 0.0 { batch.min(rate.ceil() as usize).max(1) } else { batch };
    let (mut accepted, mut rejected) = (0usize, 0usize);
    if target.starts_with("http://") || target.starts_with("https://") {
        let url = format!("{}/api/v1/readings", target.trim_end_matches('/'));
        let client = reqwest::blocking::Client::new();
        let mut sent = 0;
        for chunk in readings.chunks(batch) {
            let resp = client.post(&url).json(chunk).send().map_err(runtime)?;
            if !resp.status().is_success() {
                let status = resp.status();
                return Err(CliError::Runtime(format!("{url}: {status}: {}", resp.text().unwrap_or_default())));
            }
            let r: IngestResponse = resp.json().map_err(runtime)?;
            accepted += r.accepted;
            rejected += r.rejected.len();
            sent += chunk.len();
            pace(sent);
        }
    } else {
        let dir = DataDir::new(target);
        std::fs::create_dir_all(&dir.0).map_err(runtime)?;
        let path = dir.telemetry();
        if path.exists() && TelemetryStore::log_schema(&path).map_err(data)? != source.schema() {
            return Err(CliError::Data(format!("{} has a different zone count", path.display())));
        }
        let store = TelemetryStore::open(&path, source.schema()).map_err(data)?;
        let mut sent = 0;
        for chunk in readings.chunks(batch) {
            let (a, r) = store.append_batch(chunk.iter().cloned()).map_err(runtime)?;
            accepted += a;
            rejected += r.len();
            sent += chunk.len();
            pace(sent);
        }
    }
    println!("replayed {} readings: {accepted} accepted, {rejected} rejected", readings.len());
    Ok(())
}

pub fn train(data_dir: &Path, model_out: &Path, train_config: Option<&Path>, report_out: Option<&Path>) -> Result<()> {
    let cfg = load_config(train_config)?;
    let dir = DataDir::new(data_dir);
    let store = open_store(&dir)?;
    let (machines, raw) = machine_grids(&store, cfg.pipeline.period_ms, cfg.pipeline.aggregation)?;
    let bounds = boundaries(&dir, &machines)?;
    let trained = train_bundle(store.schema(), &raw, &bounds, &cfg.pipeline, &cfg.train, cfg.forest_config())
        .map_err(|e| match e {
            pdm_core::pipeline::PipelineError::InvalidConfig(_) | pdm_core::pipeline::PipelineError::InsufficientData(_) => data(e),
            other => runtime(other),
        })?;
    if let Some(parent) = model_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(runtime)?;
    }
    trained.bundle.save(model_out).map_err(runtime)?;
    let report_path = report_out.map(Path::to_path_buf).unwrap_or_else(|| model_out.with_extension("report.csv"));
    std::fs::write(&report_path, trained.report.to_csv()).map_err(runtime)?;
    let r = &trained.report;
    let (pipeline, forest) = sidecar_paths(model_out);
    println!("machines        {}", machines.join(","));
    println!("train windows   {}", trained.train.len());
    println!("valid windows   {}", trained.validation.len());
    println!("epochs          {}", r.train_mse.len());
    println!("train mse       {} -> {}", r.train_mse.first().unwrap_or(&f64::NAN), r.train_mse.last().unwrap_or(&f64::NAN));
    if let Some(v) = r.validation_mse.last() {
        println!("validation mse  {v}");
    }
    println!("wall time       {:.2?}", r.wall_time);
    println!("model           {}", model_out.display());
    println!("pipeline        {}", pipeline.display());
    if trained.bundle.forest.is_some() {
        println!("forest          {}", forest.display());
    }
    println!("report          {}", report_path.display());
    Ok(())
}

fn load_bundle(model: &Path) -> Result<ModelBundle> {
    ModelBundle::load(model).map_err(|e| data(format!("{}: {e}", model.display())))
}

pub fn evaluate(model: &Path, data_dir: &Path, report_out: Option<&Path>) -> Result<()> {
    let bundle = load_bundle(model)?;
    let dir = DataDir::new(data_dir);
    let store = open_store(&dir)?;
    if store.schema() != bundle.pipeline().schema() {
        return Err(CliError::Data("model and telemetry have different zone counts".into()));
    }
    let pc = &bundle.pipeline().config;
    let (machines, raw) = machine_grids(&store, pc.period_ms, pc.aggregation)?;
    let bounds = boundaries(&dir, &machines)?;
    let eval = evaluate_bundle(&bundle, &raw, &bounds).map_err(data)?;
    println!("validation windows {}", eval.samples);
    println!("lstm mse           {}", eval.lstm_mse);
    match eval.forest_mse {
        Some(f) => println!("forest mse         {f}"),
        None => println!("forest mse         -"),
    }
    println!("persistence mse    {}", eval.persistence_mse);
    if let Some(path) = report_out {
        std::fs::write(path, serde_json::to_string_pretty(&eval).map_err(runtime)?).map_err(runtime)?;
    }
    Ok(())
}

pub fn forecast(model: &Path, data_dir: &Path, horizon: usize, machine: Option<&str>, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let bundle = load_bundle(model)?;
    let dir = DataDir::new(data_dir);
    let store = open_store(&dir)?;
    let schema = store.schema();
    if schema != bundle.pipeline().schema() {
        return Err(CliError::Data("model and telemetry have different zone counts".into()));
    }
    let mut envelopes: BTreeMap<String, OperatingEnvelope> = BTreeMap::new();
    if dir.envelopes().exists() {
        let text = std::fs::read_to_string(dir.envelopes()).map_err(data)?;
        envelopes = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", dir.envelopes().display())))?;
    }
    let default_env = cfg.effective_envelope();
    let machines = match machine {
        Some(m) if store.contains_machine(m) => vec![m.to_string()],
        Some(m) => return Err(CliError::Data(format!("unknown machine `{m}`"))),
        None => store.machines(),
    };
    let members = bundle.members();
    let need = members.iter().map(|m| m.history_len()).max().unwrap_or(1);
    let pc = &bundle.pipeline().config;
    let mut out = Vec::new();
    for m in machines {
        let mut frames = recent_frames(&store, &m, need + 1, pc).map_err(data)?;
        while frames.last().is_some_and(|f| !f.is_complete()) {
            frames.pop();
        }
        let env = envelopes.get(&m).unwrap_or(&default_env);
        env.validate(schema).map_err(data)?;
        out.push(forecast_downtime(&m, &frames, pc.period_ms, &members, env, schema, horizon).map_err(data)?);
    }
    print_json(&out)
}

pub fn serve(config: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.apply_env();
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let state = AppState::open(&cfg).map_err(data)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(pdm_server::serve(Arc::new(state), &cfg.server.listen_addr)).map_err(runtime)
}
