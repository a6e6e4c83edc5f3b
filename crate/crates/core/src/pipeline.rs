//! End-to-end feature pipeline: grid frames → cleaned, normalized model
//! inputs → trained LSTM and forest members → raw-unit forecasts.
//!
//! Models can work on normalized levels or on first differences of the
//! normalized levels. Differences make the persistence forecast the zero
//! vector and let autoregressive rollouts carry a trend past the range
//! seen in training, which plain levels cannot do through a saturating
//! cell. The settings and normalization statistics needed to reproduce
//! the model inputs are stored next to the model file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::downtime::{violation_labels, DowntimeError, Forecaster, OperatingEnvelope};
use crate::forest::{fit_forest, load_forests, save_forests, Forest, ForestConfig, ForestError, Task};
use crate::lstm::{evaluate_mse, load_model, predict_horizon, save_model, train, LstmError, LstmParams, TrainConfig, TrainReport};
use crate::preprocess::{
    clean_frames, fit_normalizer, make_windows, CleaningConfig, NormMode, NormalizationStats, PreprocessError,
    WindowedDataset,
};
use crate::schema::Schema;
use crate::store::{Aggregation, SeriesFrame, StoreError, TelemetryStore};

pub const PIPELINE_FORMAT: &str = "pdm-pipeline v1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Downtime(#[from] DowntimeError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad pipeline file {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Levels,
    Deltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub period_ms: i64,
    pub aggregation: Aggregation,
    pub cleaning: CleaningConfig,
    pub normalization: NormMode,
    pub representation: Representation,
    pub window_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub train_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            period_ms: 1000,
            aggregation: Aggregation::Mean,
            cleaning: CleaningConfig::default(),
            normalization: NormMode::MinMax,
            representation: Representation::Deltas,
            window_len: 32,
            horizon: 1,
            stride: 1,
            train_fraction: 0.8,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.period_ms <= 0 {
            return bad("period_ms must be positive");
        }
        if self.window_len == 0 || self.horizon == 0 || self.stride == 0 {
            return bad("window_len, horizon and stride must be >= 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction must lie in (0, 1]");
        }
        if !(self.cleaning.outlier_z > 0.0) {
            return bad("cleaning.outlier_z must be positive");
        }
        Ok(())
    }
}

/// Default forest settings for the ensemble member: small and fast.
pub fn default_forest_config() -> ForestConfig {
    ForestConfig {
        n_trees: 10,
        max_depth: 6,
        min_samples_leaf: 5,
        features_per_split: crate::forest::FeaturesPerSplit::Sqrt,
        bootstrap: true,
        rng_seed: 7,
        task: Task::Regression,
    }
}

/// Everything needed to turn raw frames into model inputs and back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub format: String,
    pub zones: u16,
    pub config: PipelineConfig,
    pub norm: NormalizationStats,
    /// Mean and spread of the normalized one-step change per feature
    /// (deltas only). Deltas are standardized with them so a slowly
    /// drifting channel weighs as much in the loss as a fast one.
    pub delta_mean: Vec<f64>,
    pub delta_scale: Vec<f64>,
}

impl FeaturePipeline {
    /// Fits normalization statistics (and the mean step for deltas) on
    /// cleaned frames of every machine.
    pub fn fit(
        schema: Schema,
        cleaned: &[Vec<SeriesFrame>],
        boundaries: &[Vec<i64>],
        config: &PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        let all: Vec<SeriesFrame> = cleaned.iter().flatten().cloned().collect();
        if let Some(f) = all.iter().find(|f| f.values.len() != schema.width()) {
            return Err(PreprocessError::Width { expected: schema.width(), got: f.values.len() }.into());
        }
        let norm = fit_normalizer(&all, config.normalization)?;
        let mut pipe = FeaturePipeline {
            format: PIPELINE_FORMAT.to_string(),
            zones: schema.zones,
            config: config.clone(),
            delta_mean: vec![0.0; norm.width()],
            delta_scale: vec![1.0; norm.width()],
            norm,
        };
        if config.representation == Representation::Deltas {
            // model_frames with mean 0 and scale 1 yields raw normalized deltas
            let steps: Vec<SeriesFrame> = cleaned
                .iter()
                .enumerate()
                .flat_map(|(i, frames)| pipe.model_frames(frames, boundaries.get(i).map(Vec::as_slice).unwrap_or(&[])))
                .collect();
            for j in 0..pipe.features() {
                let col: Vec<f64> = steps.iter().filter_map(|f| f.values[j]).collect();
                if col.is_empty() {
                    continue;
                }
                let n = col.len() as f64;
                let mean = col.iter().sum::<f64>() / n;
                let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                pipe.delta_mean[j] = mean;
                pipe.delta_scale[j] = if sd > 1e-12 { sd } else { 1.0 };
            }
        }
        Ok(pipe)
    }

    fn standardize(&self, j: usize, delta: f64) -> f64 {
        (delta - self.delta_mean[j]) / self.delta_scale[j]
    }

    fn unstandardize(&self, j: usize, z: f64) -> f64 {
        z * self.delta_scale[j] + self.delta_mean[j]
    }

    pub fn schema(&self) -> Schema {
        Schema::new(self.zones)
    }

    pub fn features(&self) -> usize {
        self.norm.width()
    }

    /// Raw rows of history needed for one model input window.
    pub fn history_len(&self) -> usize {
        match self.config.representation {
            Representation::Levels => self.config.window_len,
            Representation::Deltas => self.config.window_len + 1,
        }
    }

    /// Offset between model-frame and raw-frame indices.
    pub fn raw_offset(&self) -> usize {
        self.history_len() - self.config.window_len
    }

    /// Normalized (and, for deltas, differenced and standardized) frames. A
    /// difference that straddles a maintenance boundary is marked missing
    /// so no window uses it.
    pub fn model_frames(&self, cleaned: &[SeriesFrame], boundaries: &[i64]) -> Vec<SeriesFrame> {
        let levels: Vec<SeriesFrame> = cleaned.iter().map(|f| self.norm.normalize_frame(f)).collect();
        match self.config.representation {
            Representation::Levels => levels,
            Representation::Deltas => levels
                .windows(2)
                .map(|w| {
                    let spans = boundaries.iter().any(|&b| w[0].timestamp < b && b <= w[1].timestamp);
                    SeriesFrame {
                        timestamp: w[1].timestamp,
                        values: w[0]
                            .values
                            .iter()
                            .zip(&w[1].values)
                            .enumerate()
                            .map(|(j, (a, b))| match (a, b) {
                                (Some(a), Some(b)) if !spans => Some(self.standardize(j, b - a)),
                                _ => None,
                            })
                            .collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn dataset(&self, cleaned: &[SeriesFrame], boundaries: &[i64]) -> Result<WindowedDataset> {
        let c = &self.config;
        Ok(make_windows(&self.model_frames(cleaned, boundaries), c.window_len, c.horizon, c.stride, boundaries)?)
    }

    /// Train and validation sets over several machines: each machine is
    /// split chronologically, then the parts are concatenated.
    pub fn split_datasets(
        &self,
        cleaned: &[Vec<SeriesFrame>],
        boundaries: &[Vec<i64>],
    ) -> Result<(WindowedDataset, WindowedDataset)> {
        let mut train = empty_like(self);
        let mut valid = empty_like(self);
        for (i, frames) in cleaned.iter().enumerate() {
            let b = boundaries.get(i).map(Vec::as_slice).unwrap_or(&[]);
            let ds = self.dataset(frames, b)?;
            let (t, v) = ds.chrono_split(self.config.train_fraction)?;
            extend(&mut train, t);
            extend(&mut valid, v);
        }
        Ok((train, valid))
    }

    /// Model-space input window from the trailing raw history, plus the
    /// last normalized level the forecast continues from.
    pub fn encode(&self, history: &[Vec<f64>]) -> std::result::Result<(Vec<Vec<f64>>, Vec<f64>), DowntimeError> {
        let need = self.history_len();
        if history.len() < need {
            return Err(DowntimeError::InsufficientHistory { needed: need, got: history.len() });
        }
        let rows = &history[history.len() - need..];
        if let Some(r) = rows.iter().find(|r| r.len() != self.features()) {
            return Err(DowntimeError::Dimension { expected: self.features(), got: r.len() });
        }
        let levels: Vec<Vec<f64>> = rows.iter().map(|r| self.norm.normalize(r)).collect();
        let last = levels.last().expect("need >= 1").clone();
        let window = match self.config.representation {
            Representation::Levels => levels,
            Representation::Deltas => levels
                .windows(2)
                .map(|w| (0..w[0].len()).map(|j| self.standardize(j, w[1][j] - w[0][j])).collect())
                .collect(),
        };
        Ok((window, last))
    }

    /// Raw-unit trajectory from model-space predictions.
    pub fn decode(&self, predictions: &[Vec<f64>], last_level: &[f64]) -> Vec<Vec<f64>> {
        let mut level = last_level.to_vec();
        predictions
            .iter()
            .map(|p| {
                match self.config.representation {
                    Representation::Levels => level.clone_from(p),
                    Representation::Deltas => {
                        level.iter_mut().zip(p).enumerate().for_each(|(j, (l, z))| *l += self.unstandardize(j, *z))
                    }
                }
                self.norm.denormalize(&level)
            })
            .collect()
    }

    /// Model-space prediction of the "last value persists" baseline.
    pub fn persistence(&self, window: &[Vec<f64>]) -> Vec<f64> {
        match self.config.representation {
            Representation::Levels => window.last().expect("nonempty window").clone(),
            Representation::Deltas => (0..self.features()).map(|j| self.standardize(j, 0.0)).collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline settings always serialize")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let p: FeaturePipeline = toml::from_str(text).map_err(|e| e.to_string())?;
        if p.format != PIPELINE_FORMAT {
            return Err(format!("unsupported format `{}`", p.format));
        }
        if p.norm.width() != Schema::new(p.zones).width() {
            return Err("normalization width does not match zone count".into());
        }
        if p.delta_mean.len() != p.norm.width() || p.delta_scale.len() != p.norm.width() {
            return Err("delta statistics width does not match zone count".into());
        }
        if p.delta_scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err("delta_scale entries must be positive".into());
        }
        Ok(p)
    }
}

fn empty_like(p: &FeaturePipeline) -> WindowedDataset {
    WindowedDataset {
        window_len: p.config.window_len,
        horizon: p.config.horizon,
        stride: p.config.stride,
        features: p.features(),
        ..Default::default()
    }
}

fn extend(into: &mut WindowedDataset, from: WindowedDataset) {
    into.inputs.extend(from.inputs);
    into.targets.extend(from.targets);
    into.timestamps.extend(from.timestamps);
    into.origins.extend(from.origins);
}

/// Grid frames of one machine over its whole history, cleaned.
pub fn machine_frames(store: &TelemetryStore, machine: &str, config: &PipelineConfig) -> Result<Vec<SeriesFrame>> {
    let grid = store.all_grid_frames(machine, config.period_ms, config.aggregation)?;
    Ok(clean_frames(&grid, &config.cleaning).0)
}

/// The last `rows` grid periods of a machine (ending at its latest reading),
/// with short gaps interpolated but no outlier clamping.
pub fn recent_frames(store: &TelemetryStore, machine: &str, rows: usize, config: &PipelineConfig) -> Result<Vec<SeriesFrame>> {
    let (_, hi) = store.extent(machine)?;
    let period = config.period_ms;
    let end = hi.div_euclid(period) * period + period;
    let span = (rows + config.cleaning.max_gap) as i64 * period;
    let grid = store.grid_frames(machine, (end - span).max(0), end, period, config.aggregation)?;
    let interp = CleaningConfig { outlier_z: f64::INFINITY, max_gap: config.cleaning.max_gap };
    Ok(clean_frames(&grid, &interp).0)
}

/// LSTM ensemble member.
#[derive(Debug, Clone)]
pub struct LstmForecaster {
    pub pipeline: FeaturePipeline,
    pub params: LstmParams,
}

impl Forecaster for LstmForecaster {
    fn name(&self) -> &str {
        "lstm"
    }

    fn history_len(&self) -> usize {
        self.pipeline.history_len()
    }

    fn features(&self) -> usize {
        self.pipeline.features()
    }

    fn forecast(&self, history: &[Vec<f64>], steps: usize) -> std::result::Result<Vec<Vec<f64>>, DowntimeError> {
        let (window, last) = self.pipeline.encode(history)?;
        let pred = predict_horizon(&window, &self.params, steps).map_err(|e| DowntimeError::Model(e.to_string()))?;
        Ok(self.pipeline.decode(&pred, &last))
    }
}

/// Random-forest ensemble member: one regression forest per output feature,
/// each reading the flattened input window.
#[derive(Debug, Clone)]
pub struct ForestForecaster {
    pub pipeline: FeaturePipeline,
    pub forests: Vec<Forest>,
}

impl ForestForecaster {
    pub fn predict_step(&self, window: &[Vec<f64>]) -> std::result::Result<Vec<f64>, DowntimeError> {
        let x = window.concat();
        self.forests
            .iter()
            .map(|f| f.predict(&x).map_err(|e| DowntimeError::Model(e.to_string())))
            .collect()
    }
}

impl Forecaster for ForestForecaster {
    fn name(&self) -> &str {
        "forest"
    }

    fn history_len(&self) -> usize {
        self.pipeline.history_len()
    }

    fn features(&self) -> usize {
        self.pipeline.features()
    }

    fn forecast(&self, history: &[Vec<f64>], steps: usize) -> std::result::Result<Vec<Vec<f64>>, DowntimeError> {
        if steps == 0 {
            return Err(DowntimeError::InvalidArgument("steps must be >= 1".into()));
        }
        let (mut window, last) = self.pipeline.encode(history)?;
        let mut preds = Vec::with_capacity(steps);
        for _ in 0..steps {
            let p = self.predict_step(&window)?;
            window.remove(0);
            window.push(p.clone());
            preds.push(p);
        }
        Ok(self.pipeline.decode(&preds, &last))
    }
}

/// Fits one regression forest per output feature. Forest `j` seeds its trees
/// from `rng_seed + j * n_trees` so no two trees share a stream.
pub fn fit_output_forests(ds: &WindowedDataset, cfg: &ForestConfig) -> Result<Vec<Forest>> {
    if ds.is_empty() {
        return Err(PipelineError::InsufficientData("no training windows for the forest".into()));
    }
    let x = ds.flattened_inputs();
    (0..ds.features)
        .map(|j| {
            let y: Vec<f64> = ds.targets.iter().map(|t| t[j]).collect();
            let c = ForestConfig {
                task: Task::Regression,
                rng_seed: cfg.rng_seed.wrapping_add((j * cfg.n_trees) as u64),
                ..cfg.clone()
            };
            Ok(fit_forest(&x, &y, &c)?)
        })
        .collect()
}

/// Binary fault classifier: predicts whether a sustained envelope exit
/// begins within `lookahead` steps after a window.
pub fn fit_fault_classifier(
    pipeline: &FeaturePipeline,
    cleaned: &[SeriesFrame],
    boundaries: &[i64],
    envelope: &OperatingEnvelope,
    lookahead: usize,
    cfg: &ForestConfig,
) -> Result<(Forest, WindowedDataset, Vec<f64>)> {
    let ds = pipeline.dataset(cleaned, boundaries)?;
    if ds.is_empty() {
        return Err(PipelineError::InsufficientData("no windows for the classifier".into()));
    }
    let origins: Vec<usize> = ds.origins.iter().map(|o| o + pipeline.raw_offset()).collect();
    let labels = violation_labels(cleaned, &origins, pipeline.config.window_len, lookahead, envelope, pipeline.schema())?;
    let forest = fit_forest(
        &ds.flattened_inputs(),
        &labels,
        &ForestConfig { task: Task::Classification, ..cfg.clone() },
    )?;
    Ok((forest, ds, labels))
}

/// A trained model with its pipeline settings and optional forest member.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub lstm: LstmForecaster,
    pub forest: Option<ForestForecaster>,
}

pub fn sidecar_paths(model: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = model.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".pipeline"), with(".forest"))
}

impl ModelBundle {
    pub fn pipeline(&self) -> &FeaturePipeline {
        &self.lstm.pipeline
    }

    /// Ensemble members, primary (LSTM) first.
    pub fn members(&self) -> Vec<&dyn Forecaster> {
        let mut m: Vec<&dyn Forecaster> = vec![&self.lstm];
        if let Some(f) = &self.forest {
            m.push(f);
        }
        m
    }

    /// Writes `<path>` (LSTM), `<path>.pipeline` and, if present, `<path>.forest`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (pipe, forest) = sidecar_paths(path);
        save_model(&self.lstm.params, path)?;
        fs::write(&pipe, self.pipeline().to_toml()).map_err(|source| PipelineError::Io { path: pipe, source })?;
        match &self.forest {
            Some(f) => save_forests(&f.forests, &forest)?,
            None => {
                if forest.exists() {
                    fs::remove_file(&forest).map_err(|source| PipelineError::Io { path: forest, source })?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (pipe, forest) = sidecar_paths(path);
        let params = load_model(path)?;
        let text = fs::read_to_string(&pipe).map_err(|source| PipelineError::Io { path: pipe.clone(), source })?;
        let pipeline = FeaturePipeline::from_toml(&text).map_err(|message| PipelineError::Sidecar { path: pipe.clone(), message })?;
        let f = pipeline.features();
        if params.input_size != f || params.output_size != f {
            return Err(PipelineError::Sidecar {
                path: pipe,
                message: format!("model is {}→{} but the pipeline has {f} features", params.input_size, params.output_size),
            });
        }
        let forest = if forest.exists() {
            let forests = load_forests(&forest)?;
            let width = pipeline.config.window_len * f;
            if forests.len() != f || forests.iter().any(|x| x.n_features != width) {
                return Err(PipelineError::Sidecar {
                    path: forest,
                    message: format!("expected {f} forests over {width} inputs"),
                });
            }
            Some(ForestForecaster { pipeline: pipeline.clone(), forests })
        } else {
            None
        };
        Ok(ModelBundle {
            lstm: LstmForecaster { pipeline, params },
            forest,
        })
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainedBundle {
    pub bundle: ModelBundle,
    pub report: TrainReport,
    pub train: WindowedDataset,
    pub validation: WindowedDataset,
}

/// Cleans each machine's frames, fits the pipeline, trains the LSTM and
/// (if configured) the forest member on the same windows.
pub fn train_bundle(
    schema: Schema,
    raw: &[Vec<SeriesFrame>],
    boundaries: &[Vec<i64>],
    pipeline: &PipelineConfig,
    train_cfg: &TrainConfig,
    forest_cfg: Option<&ForestConfig>,
) -> Result<TrainedBundle> {
    let cleaned: Vec<Vec<SeriesFrame>> = raw.iter().map(|f| clean_frames(f, &pipeline.cleaning).0).collect();
    let pipe = FeaturePipeline::fit(schema, &cleaned, boundaries, pipeline)?;
    let (train_ds, valid_ds) = pipe.split_datasets(&cleaned, boundaries)?;
    if train_ds.is_empty() {
        return Err(PipelineError::InsufficientData(format!(
            "no complete windows of {} + {} rows",
            pipeline.window_len, pipeline.horizon
        )));
    }
    let report = train(&train_ds, &valid_ds, train_cfg)?;
    let forest = match forest_cfg {
        Some(cfg) => Some(ForestForecaster {
            pipeline: pipe.clone(),
            forests: fit_output_forests(&train_ds, cfg)?,
        }),
        None => None,
    };
    Ok(TrainedBundle {
        bundle: ModelBundle {
            lstm: LstmForecaster { pipeline: pipe, params: report.params.clone() },
            forest,
        },
        report,
        train: train_ds,
        validation: valid_ds,
    })
}

/// Validation MSEs in model space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub samples: usize,
    pub lstm_mse: f64,
    pub forest_mse: Option<f64>,
    pub persistence_mse: f64,
}

/// Rebuilds the validation split with the stored pipeline settings and
/// scores every model on it.
pub fn evaluate_bundle(bundle: &ModelBundle, raw: &[Vec<SeriesFrame>], boundaries: &[Vec<i64>]) -> Result<Evaluation> {
    let pipe = bundle.pipeline();
    let cleaned: Vec<Vec<SeriesFrame>> = raw.iter().map(|f| clean_frames(f, &pipe.config.cleaning).0).collect();
    let (_, valid) = pipe.split_datasets(&cleaned, boundaries)?;
    if valid.is_empty() {
        return Err(PipelineError::InsufficientData("empty validation split".into()));
    }
    let mean_sq = |pred: &dyn Fn(&[Vec<f64>]) -> std::result::Result<Vec<f64>, DowntimeError>| -> Result<f64> {
        let mut total = 0.0;
        for (w, t) in valid.inputs.iter().zip(&valid.targets) {
            let p = pred(w)?;
            total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64;
        }
        Ok(total / valid.len() as f64)
    };
    let forest_mse = match &bundle.forest {
        Some(f) => Some(mean_sq(&|w| f.predict_step(w))?),
        None => None,
    };
    Ok(Evaluation {
        samples: valid.len(),
        lstm_mse: evaluate_mse(&valid, &bundle.lstm.params)?,
        forest_mse,
        persistence_mse: mean_sq(&|w| Ok(pipe.persistence(w)))?,
    })
}
