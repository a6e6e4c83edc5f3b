//! Cleaning, scaling, windowing and correlation analysis for grid frames.
//!
//! Everything here is a pure function of its inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::SeriesFrame;
use crate::textlog::fmt_f64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreprocessError {
    #[error("no samples for column {0}; cannot fit normalization stats")]
    MissingStats(usize),
    #[error("need at least {needed} frames, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("frame width {got} does not match expected {expected}")]
    Width { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    /// Values further than this many standard deviations from the mean are clamped.
    pub outlier_z: f64,
    /// Longest run of missing grid points that is linearly interpolated.
    pub max_gap: usize,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            outlier_z: 4.0,
            max_gap: 5,
        }
    }
}

/// A run of missing points that was too long (or at an edge) to interpolate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapSpan {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub interpolated: usize,
    pub clamped: usize,
    pub unfilled: Vec<GapSpan>,
}

/// Clamps outliers, then linearly interpolates interior gaps of at most
/// `cfg.max_gap` points. Outlier statistics are the population mean and
/// standard deviation of the present values.
pub fn clean_series(series: &[Option<f64>], cfg: &CleaningConfig) -> (Vec<Option<f64>>, CleaningReport) {
    let mut out = series.to_vec();
    let mut report = CleaningReport::default();

    let present: Vec<f64> = series.iter().flatten().copied().collect();
    if !present.is_empty() && cfg.outlier_z > 0.0 {
        let n = present.len() as f64;
        let mean = present.iter().sum::<f64>() / n;
        let std = (present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std > 0.0 {
            let lo = mean - cfg.outlier_z * std;
            let hi = mean + cfg.outlier_z * std;
            for v in out.iter_mut().flatten() {
                if *v < lo || *v > hi {
                    *v = v.clamp(lo, hi);
                    report.clamped += 1;
                }
            }
        }
    }

    let mut i = 0;
    while i < out.len() {
        if out[i].is_some() {
            i += 1;
            continue;
        }
        let start = i;
        while i < out.len() && out[i].is_none() {
            i += 1;
        }
        let len = i - start;
        let interior = start > 0 && i < out.len();
        if interior && len <= cfg.max_gap {
            let a = out[start - 1].unwrap();
            let b = out[i].unwrap();
            let span = (len + 1) as f64;
            for k in 0..len {
                let frac = (k + 1) as f64 / span;
                out[start + k] = Some(a + (b - a) * frac);
            }
            report.interpolated += len;
        } else {
            report.unfilled.push(GapSpan { start, len });
        }
    }
    (out, report)
}

/// Applies [`clean_series`] column by column.
pub fn clean_frames(frames: &[SeriesFrame], cfg: &CleaningConfig) -> (Vec<SeriesFrame>, Vec<CleaningReport>) {
    let width = frames.first().map_or(0, |f| f.values.len());
    let mut out: Vec<SeriesFrame> = frames.to_vec();
    let mut reports = Vec::with_capacity(width);
    for col in 0..width {
        let column: Vec<Option<f64>> = frames.iter().map(|f| f.values[col]).collect();
        let (cleaned, report) = clean_series(&column, cfg);
        for (frame, v) in out.iter_mut().zip(cleaned) {
            frame.values[col] = v;
        }
        reports.push(report);
    }
    (out, reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    MinMax,
    ZScore,
}

/// Per-column scaling statistics. For min-max mode the pair is `(min, max)`,
/// for z-score mode `(mean, std)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mode: NormMode,
    pub columns: Vec<(f64, f64)>,
}

pub fn fit_normalizer(frames: &[SeriesFrame], mode: NormMode) -> Result<NormalizationStats> {
    let width = frames.first().map_or(0, |f| f.values.len());
    let mut columns = Vec::with_capacity(width);
    for col in 0..width {
        let vals: Vec<f64> = frames.iter().filter_map(|f| f.values[col]).collect();
        if vals.is_empty() {
            return Err(PreprocessError::MissingStats(col));
        }
        columns.push(match mode {
            NormMode::MinMax => (
                vals.iter().copied().fold(f64::INFINITY, f64::min),
                vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ),
            NormMode::ZScore => {
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
        });
    }
    Ok(NormalizationStats { mode, columns })
}

impl NormalizationStats {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Min-max: `[min, max] -> [0, 1]`, a zero-range column maps to 0.5.
    /// Z-score: `(x - mean) / std`, a zero-spread column maps to 0.
    pub fn normalize_value(&self, col: usize, x: f64) -> f64 {
        let (a, b) = self.columns[col];
        match self.mode {
            NormMode::MinMax if b > a => (x - a) / (b - a),
            NormMode::MinMax => 0.5,
            NormMode::ZScore if b > 0.0 => (x - a) / b,
            NormMode::ZScore => 0.0,
        }
    }

    pub fn denormalize_value(&self, col: usize, y: f64) -> f64 {
        let (a, b) = self.columns[col];
        match self.mode {
            NormMode::MinMax if b > a => y * (b - a) + a,
            NormMode::MinMax => a,
            NormMode::ZScore if b > 0.0 => y * b + a,
            NormMode::ZScore => a,
        }
    }

    /// Scale of one normalized unit in raw units for a column (0 for a
    /// degenerate column).
    pub fn unit(&self, col: usize) -> f64 {
        let (a, b) = self.columns[col];
        match self.mode {
            NormMode::MinMax => b - a,
            NormMode::ZScore => b,
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(i, &v)| self.normalize_value(i, v)).collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(i, &v)| self.denormalize_value(i, v)).collect()
    }

    pub fn normalize_frame(&self, frame: &SeriesFrame) -> SeriesFrame {
        SeriesFrame {
            timestamp: frame.timestamp,
            values: frame
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| v.map(|v| self.normalize_value(i, v)))
                .collect(),
        }
    }
}

/// Supervised samples cut from a frame sequence.
///
/// Sample `n` uses input rows `origins[n] .. origins[n] + window_len` and the
/// target row `origins[n] + window_len + horizon - 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowedDataset {
    /// `[N][W][F]`
    pub inputs: Vec<Vec<Vec<f64>>>,
    /// `[N][F]`
    pub targets: Vec<Vec<f64>>,
    /// Timestamp of each sample's target row.
    pub timestamps: Vec<i64>,
    /// First input row of each sample in the source frames.
    pub origins: Vec<usize>,
    pub window_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub features: usize,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Number of windows that fit in `len` rows, before any are dropped.
    pub fn window_count(len: usize, window_len: usize, horizon: usize, stride: usize) -> usize {
        if stride == 0 || len < window_len + horizon {
            0
        } else {
            (len - window_len - horizon) / stride + 1
        }
    }

    /// Samples `range`, keeping window geometry.
    pub fn slice(&self, range: std::ops::Range<usize>) -> WindowedDataset {
        WindowedDataset {
            inputs: self.inputs[range.clone()].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            origins: self.origins[range].to_vec(),
            window_len: self.window_len,
            horizon: self.horizon,
            stride: self.stride,
            features: self.features,
        }
    }

    /// First `ceil(N * train_fraction)` samples train, the rest validate.
    /// Order is preserved.
    pub fn chrono_split(&self, train_fraction: f64) -> Result<(WindowedDataset, WindowedDataset)> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(PreprocessError::InvalidArgument(format!(
                "train fraction {train_fraction} outside (0, 1]"
            )));
        }
        let n = self.len();
        // Tolerance absorbs binary rounding such as 0.7 * 10 = 7.000000000000001.
        let cut = ((n as f64 * train_fraction) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
        Ok((self.slice(0..cut), self.slice(cut..n)))
    }

    /// Flattens each input window row-major into one `W * F` vector.
    pub fn flattened_inputs(&self) -> Vec<Vec<f64>> {
        self.inputs.iter().map(|w| w.concat()).collect()
    }
}

/// Cuts sliding windows. A window is dropped when any of its rows (inputs
/// or target) has a missing value, or when a maintenance boundary `b` falls
/// inside it, i.e. its first row is before `b` and its last row at or after.
pub fn make_windows(
    frames: &[SeriesFrame],
    window_len: usize,
    horizon: usize,
    stride: usize,
    maintenance_boundaries: &[i64],
) -> Result<WindowedDataset> {
    if window_len == 0 || horizon == 0 || stride == 0 {
        return Err(PreprocessError::InvalidArgument(format!(
            "window_len={window_len}, horizon={horizon}, stride={stride} must all be >= 1"
        )));
    }
    let features = frames.first().map_or(0, |f| f.values.len());
    if let Some(f) = frames.iter().find(|f| f.values.len() != features) {
        return Err(PreprocessError::Width {
            expected: features,
            got: f.values.len(),
        });
    }
    let mut ds = WindowedDataset {
        window_len,
        horizon,
        stride,
        features,
        ..Default::default()
    };
    let count = WindowedDataset::window_count(frames.len(), window_len, horizon, stride);
    for n in 0..count {
        let start = n * stride;
        let target = start + window_len + horizon - 1;
        let first_ts = frames[start].timestamp;
        let last_ts = frames[target].timestamp;
        if maintenance_boundaries.iter().any(|&b| first_ts < b && b <= last_ts) {
            continue;
        }
        let rows = &frames[start..start + window_len];
        let complete = rows.iter().all(SeriesFrame::is_complete) && frames[target].is_complete();
        if !complete {
            continue;
        }
        ds.inputs.push(rows.iter().map(|f| f.values.iter().map(|v| v.unwrap()).collect()).collect());
        ds.targets.push(frames[target].values.iter().map(|v| v.unwrap()).collect());
        ds.timestamps.push(last_ts);
        ds.origins.push(start);
    }
    Ok(ds)
}

/// Pairwise-complete Pearson correlations between frame columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Pairs `(a, b)`, `a < b`, with fewer than two jointly present rows.
    pub absent: Vec<(usize, usize)>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a][b]
    }

    /// Header row of labels, then one row of round-trip decimals per column.
    pub fn to_csv(&self) -> String {
        let mut out = self.labels.join(",");
        out.push('\n');
        for row in &self.values {
            out.push_str(&row.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

pub fn pearson_matrix(frames: &[SeriesFrame], labels: &[String]) -> Result<CorrelationMatrix> {
    if frames.len() < 2 {
        return Err(PreprocessError::InsufficientData {
            needed: 2,
            got: frames.len(),
        });
    }
    let width = labels.len();
    if let Some(f) = frames.iter().find(|f| f.values.len() != width) {
        return Err(PreprocessError::Width {
            expected: width,
            got: f.values.len(),
        });
    }
    let mut values = vec![vec![0.0; width]; width];
    let mut absent = Vec::new();
    for a in 0..width {
        values[a][a] = 1.0;
        for b in a + 1..width {
            let pairs: Vec<(f64, f64)> = frames
                .iter()
                .filter_map(|f| Some((f.values[a]?, f.values[b]?)))
                .collect();
            let r = if pairs.len() < 2 {
                absent.push((a, b));
                0.0
            } else {
                pearson(&pairs)
            };
            values[a][b] = r;
            values[b][a] = r;
        }
    }
    Ok(CorrelationMatrix {
        labels: labels.to_vec(),
        values,
        absent,
    })
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}
