//! Deterministic tubing-machine simulator with known failure times.
//!
//! Each parameter follows
//!
//! ```text
//! value(t) = baseline + amplitude·sin(2πt/period + phase) + drift(t) + failure(t) + σ·N(0,1)
//! ```
//!
//! Linear drift is `rate·(t − s)` and exponential drift `rate·(e^{(t−s)/τ} − 1)`
//! where `s` is the later of the profile start and the last maintenance
//! reset. Noise comes from PCG64 through Box–Muller, drawing one normal per
//! parameter per step even when σ is 0 so parameters never shift each
//! other's streams.

use rand_pcg::rand_core::{RngCore, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::downtime::{OperatingEnvelope, ParameterBounds};
use crate::schema::{ParameterId, Schema, DEFAULT_ZONES};
use crate::store::{SensorReading, SeriesFrame};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterSim {
    pub parameter: ParameterId,
    pub baseline: f64,
    #[serde(default)]
    pub noise_std: f64,
    /// Sine modulation amplitude; 0 disables it.
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_sine_period")]
    pub sine_period_ms: f64,
    #[serde(default)]
    pub phase: f64,
}

fn default_sine_period() -> f64 {
    60_000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    Linear,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationProfile {
    pub parameter: ParameterId,
    pub mode: DriftMode,
    /// Linear: units per ms. Exponential: scale in units.
    pub rate: f64,
    #[serde(default)]
    pub start_ms: i64,
    /// Exponential time constant in ms.
    #[serde(default = "default_tau")]
    pub tau_ms: f64,
}

fn default_tau() -> f64 {
    600_000.0
}

/// A step change of `offset` in one parameter from `time_ms` until the next
/// maintenance reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedFailure {
    pub parameter: ParameterId,
    pub time_ms: i64,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub machine_id: String,
    pub zones: u16,
    pub rng_seed: u64,
    pub start_ms: i64,
    pub sample_period_ms: i64,
    pub parameters: Vec<ParameterSim>,
    pub degradation: Vec<DegradationProfile>,
    pub injected_failure: Option<InjectedFailure>,
    pub maintenance_resets: Vec<i64>,
}

/// Default generator settings of one slot.
fn nominal_settings(schema: Schema, i: usize) -> ParameterSim {
    let p = schema.parameter(i).expect("slot in range");
    let (baseline, noise_std, amplitude) = match p {
        ParameterId::EjectionPct => (2.0, 0.02, 0.3),
        ParameterId::ExtruderPressure => (150.0, 0.3, 3.0),
        ParameterId::MachineSpeed => (100.0, 0.2, 2.0),
        ParameterId::ActualValuesInput => (50.0, 0.1, 1.0),
        ParameterId::HeatingZone(_) => (200.0, 0.3, 2.5),
    };
    ParameterSim {
        parameter: p,
        baseline,
        noise_std,
        amplitude,
        sine_period_ms: 40_000.0 + 7_000.0 * i as f64,
        phase: 0.7 * i as f64,
    }
}

impl Default for SimConfig {
    /// Nominal settings for every parameter of the default schema, left
    /// implicit so that changing `zones` alone stays valid.
    fn default() -> Self {
        SimConfig { parameters: Vec::new(), ..SimConfig::nominal(DEFAULT_ZONES) }
    }
}

impl SimConfig {
    /// Nominal, drift-free machine with mild periodic modulation on every
    /// parameter, listed explicitly.
    pub fn nominal(zones: u16) -> Self {
        let schema = Schema::new(zones);
        let parameters = (0..schema.width()).map(|slot| nominal_settings(schema, slot)).collect();
        SimConfig {
            machine_id: "MNL15".into(),
            zones,
            rng_seed: 42,
            start_ms: 0,
            sample_period_ms: 1000,
            parameters,
            degradation: Vec::new(),
            injected_failure: None,
            maintenance_resets: Vec::new(),
        }
    }

    pub fn schema(&self) -> Schema {
        Schema::new(self.zones)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.sample_period_ms <= 0 {
            return bad(format!("sample_period_ms {} must be positive", self.sample_period_ms));
        }
        if self.start_ms < 0 {
            return bad("start_ms must be >= 0".into());
        }
        if !crate::textlog::is_valid_machine_id(&self.machine_id) {
            return bad(format!("invalid machine id `{}`", self.machine_id));
        }
        let schema = self.schema();
        let mut seen = vec![false; schema.width()];
        for p in &self.parameters {
            let slot = schema.slot(p.parameter).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            if std::mem::replace(&mut seen[slot], true) {
                return bad(format!("{} configured twice", p.parameter));
            }
            if !(p.noise_std >= 0.0) || !p.noise_std.is_finite() {
                return bad(format!("{}: noise_std must be finite and >= 0", p.parameter));
            }
            if ![p.baseline, p.amplitude, p.phase].iter().all(|v| v.is_finite()) || !(p.sine_period_ms > 0.0) {
                return bad(format!("{}: non-finite or non-positive modulation", p.parameter));
            }
        }
        for d in &self.degradation {
            schema.slot(d.parameter).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            if !d.rate.is_finite() || !(d.tau_ms > 0.0) || !d.tau_ms.is_finite() {
                return bad(format!("{}: rate must be finite and tau positive", d.parameter));
            }
        }
        if let Some(f) = &self.injected_failure {
            schema.slot(f.parameter).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            if !f.offset.is_finite() {
                return bad("injected failure offset must be finite".into());
            }
        }
        Ok(())
    }

    /// Settings of a slot: the configured entry, or the nominal default.
    pub fn settings(&self, slot: usize) -> ParameterSim {
        let schema = self.schema();
        let p = schema.parameter(slot).expect("slot in range");
        self.parameters
            .iter()
            .find(|s| s.parameter == p)
            .copied()
            .unwrap_or_else(|| nominal_settings(schema, slot))
    }

    /// Latest maintenance reset at or before `t`.
    fn last_reset(&self, t: i64) -> Option<i64> {
        self.maintenance_resets.iter().copied().filter(|&r| r <= t).max()
    }

    /// Noise-free value of a slot at time `t`.
    pub fn clean_value(&self, slot: usize, t: i64) -> f64 {
        let s = self.settings(slot);
        let mut v = s.baseline;
        if s.amplitude != 0.0 {
            v += s.amplitude * (std::f64::consts::TAU * t as f64 / s.sine_period_ms + s.phase).sin();
        }
        let reset = self.last_reset(t);
        for d in self.degradation.iter().filter(|d| d.parameter == s.parameter) {
            let from = reset.map_or(d.start_ms, |r| r.max(d.start_ms));
            if t < from {
                continue;
            }
            let dt = (t - from) as f64;
            v += match d.mode {
                DriftMode::Linear => d.rate * dt,
                DriftMode::Exponential => d.rate * ((dt / d.tau_ms).exp() - 1.0),
            };
        }
        if let Some(f) = self.injected_failure.as_ref().filter(|f| f.parameter == s.parameter) {
            if t >= f.time_ms && reset.is_none_or(|r| r <= f.time_ms) {
                v += f.offset;
            }
        }
        v
    }

    /// Envelope of `baseline ± (|amplitude| + 3σ)` for every parameter.
    pub fn default_envelope(&self, sustain_steps: usize) -> OperatingEnvelope {
        let bounds = (0..self.schema().width())
            .map(|slot| {
                let p = self.settings(slot);
                let half = (p.amplitude.abs() + 3.0 * p.noise_std).max(1e-9 * p.baseline.abs().max(1.0));
                ParameterBounds {
                    parameter: p.parameter,
                    lower: p.baseline - half,
                    upper: p.baseline + half,
                }
            })
            .collect();
        OperatingEnvelope { sustain_steps, bounds }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub readings: Vec<SensorReading>,
    pub frames: Vec<SeriesFrame>,
    /// First sustained envelope exit of the noise-free trajectory, if an
    /// envelope was supplied and the exit falls inside the run.
    pub ground_truth_down_at: Option<i64>,
}

/// Box–Muller standard normal from two uniform draws.
fn standard_normal(rng: &mut Pcg64) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    let u1 = 1.0 - (rng.next_u64() >> 11) as f64 * SCALE; // (0, 1]
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE; // [0, 1)
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn step_count(cfg: &SimConfig, duration_ms: i64) -> usize {
    if duration_ms <= 0 {
        0
    } else {
        ((duration_ms + cfg.sample_period_ms - 1) / cfg.sample_period_ms) as usize
    }
}

/// Simulates `[start_ms, start_ms + duration_ms)` on the sample grid.
pub fn generate(cfg: &SimConfig, duration_ms: i64, envelope: Option<&OperatingEnvelope>) -> Result<SimRun> {
    cfg.validate()?;
    if duration_ms < 0 {
        return Err(SimError::InvalidConfig(format!("duration {duration_ms} must be >= 0")));
    }
    let schema = cfg.schema();
    let width = schema.width();
    let params = schema.parameters();
    let noise: Vec<f64> = (0..width).map(|s| cfg.settings(s).noise_std).collect();
    let n = step_count(cfg, duration_ms);
    let mut rng = Pcg64::seed_from_u64(cfg.rng_seed);
    let mut readings = Vec::with_capacity(n * width);
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let t = cfg.start_ms + k as i64 * cfg.sample_period_ms;
        let mut values = Vec::with_capacity(width);
        for slot in 0..width {
            let z = standard_normal(&mut rng);
            let v = cfg.clean_value(slot, t) + noise[slot] * z;
            readings.push(SensorReading::new(cfg.machine_id.clone(), t, params[slot], v));
            values.push(Some(v));
        }
        frames.push(SeriesFrame { timestamp: t, values });
    }
    let ground_truth_down_at = match envelope {
        Some(env) => ground_truth_down_at(cfg, env, duration_ms)?,
        None => None,
    };
    Ok(SimRun {
        readings,
        frames,
        ground_truth_down_at,
    })
}

/// First grid time whose noise-free value starts a run of at least
/// `sustain_steps` out-of-bounds steps inside `[start_ms, start_ms + duration_ms)`.
///
/// Parameters whose trajectory is a single linear ramp from an in-bounds
/// baseline use the closed form; everything else is scanned step by step.
pub fn ground_truth_down_at(cfg: &SimConfig, envelope: &OperatingEnvelope, duration_ms: i64) -> Result<Option<i64>> {
    cfg.validate()?;
    let schema = cfg.schema();
    let slots = envelope.by_slot(schema).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    let n = step_count(cfg, duration_ms);
    let mut best: Option<i64> = None;
    for (slot, bounds) in slots.iter().enumerate() {
        let Some(b) = bounds else { continue };
        let onset = match closed_form_onset(cfg, slot, b, envelope.sustain_steps, n) {
            Some(result) => result,
            None => scan_onset(cfg, slot, b, envelope.sustain_steps, n),
        };
        if let Some(t) = onset {
            best = Some(best.map_or(t, |x: i64| x.min(t)));
        }
    }
    Ok(best)
}

/// Step-by-step reference for one slot.
pub fn scan_onset(cfg: &SimConfig, slot: usize, b: &ParameterBounds, sustain: usize, n: usize) -> Option<i64> {
    let mut run = 0;
    for k in 0..n {
        let t = cfg.start_ms + k as i64 * cfg.sample_period_ms;
        if b.contains(cfg.clean_value(slot, t)) {
            run = 0;
        } else {
            run += 1;
            if run >= sustain {
                return Some(t - (sustain as i64 - 1) * cfg.sample_period_ms);
            }
        }
    }
    None
}

/// Closed form for a baseline-plus-one-linear-ramp trajectory. The outer
/// `None` means the closed form does not apply.
pub fn closed_form_onset(cfg: &SimConfig, slot: usize, b: &ParameterBounds, sustain: usize, n: usize) -> Option<Option<i64>> {
    let s = cfg.settings(slot);
    let profiles: Vec<&DegradationProfile> = cfg.degradation.iter().filter(|d| d.parameter == s.parameter).collect();
    let failure = cfg.injected_failure.as_ref().is_some_and(|f| f.parameter == s.parameter);
    if s.amplitude != 0.0 || failure || !b.contains(s.baseline) || profiles.len() > 1 {
        return None;
    }
    let Some(d) = profiles.first() else {
        return Some(None); // constant, in-bounds
    };
    if d.mode != DriftMode::Linear {
        return None;
    }
    if d.rate == 0.0 {
        return Some(None);
    }
    let period = cfg.sample_period_ms;
    let end = cfg.start_ms + n as i64 * period;
    let bound = if d.rate > 0.0 { b.upper } else { b.lower };
    let time = |k: i64| cfg.start_ms + k * period;
    // first grid index at or after t
    let grid_from = |t: i64| -> i64 {
        if t <= cfg.start_ms {
            0
        } else {
            (t - cfg.start_ms + period - 1) / period
        }
    };

    // Each ramp segment starts at the profile start or a later reset and
    // runs until the next reset. Within a segment the out-of-bounds grid
    // points form a suffix; a run continues across a reset only when no
    // grid point samples the recovered value.
    let mut starts = vec![d.start_ms];
    let mut resets: Vec<i64> = cfg.maintenance_resets.iter().copied().filter(|&r| r > d.start_ms).collect();
    resets.sort_unstable();
    resets.dedup();
    starts.extend(&resets);
    let mut run: Option<i64> = None;
    for (j, &a) in starts.iter().enumerate() {
        let seg_end = starts.get(j + 1).copied().unwrap_or(i64::MAX).min(end);
        let lo = grid_from(a);
        let hi = grid_from(seg_end) - 1;
        if lo > hi {
            continue;
        }
        let crossing = a as f64 + (bound - s.baseline) / d.rate;
        let after = ((crossing - cfg.start_ms as f64) / period as f64).floor() + 1.0;
        let mut k = after.clamp(lo as f64, (hi + 1) as f64) as i64;
        // Rounding guard: settle on the exact first out-of-bounds grid step.
        while k > lo && !b.contains(cfg.clean_value(slot, time(k - 1))) {
            k -= 1;
        }
        while k <= hi && b.contains(cfg.clean_value(slot, time(k))) {
            k += 1;
        }
        if k > hi {
            run = None;
            continue;
        }
        let r = if k == lo { *run.get_or_insert(k) } else { *run.insert(k) };
        if hi - r + 1 >= sustain as i64 {
            return Some(Some(time(r)));
        }
    }
    Some(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(zones: u16) -> SimConfig {
        let mut cfg = SimConfig::nominal(zones);
        for p in &mut cfg.parameters {
            p.noise_std = 0.0;
            p.amplitude = 0.0;
        }
        cfg
    }

    fn pressure_env(upper: f64, d: usize) -> OperatingEnvelope {
        OperatingEnvelope::new(
            d,
            vec![ParameterBounds { parameter: ParameterId::ExtruderPressure, lower: 100.0, upper }],
        )
        .unwrap()
    }

    #[test]
    fn noise_free_flat_run_is_baseline() {
        let cfg = flat(2);
        let run = generate(&cfg, 10_000, None).unwrap();
        assert_eq!(run.frames.len(), 10);
        assert_eq!(run.readings.len(), 60);
        for f in &run.frames {
            for (slot, v) in f.values.iter().enumerate() {
                assert_eq!(v.unwrap(), cfg.parameters[slot].baseline);
            }
        }
    }

    #[test]
    fn linear_drift_is_exact() {
        let mut cfg = flat(1);
        cfg.degradation.push(DegradationProfile {
            parameter: ParameterId::ExtruderPressure,
            mode: DriftMode::Linear,
            rate: 0.001,
            start_ms: 0,
            tau_ms: 1.0,
        });
        let run = generate(&cfg, 20_000, None).unwrap();
        for f in &run.frames {
            assert_eq!(f.values[1].unwrap(), 150.0 + 0.001 * f.timestamp as f64);
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let cfg = SimConfig::default();
        let a = generate(&cfg, 50_000, None).unwrap();
        let b = generate(&cfg, 50_000, None).unwrap();
        let bits = |r: &SimRun| r.readings.iter().map(|x| x.value.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = generate(&SimConfig { rng_seed: 7, ..cfg }, 50_000, None).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn noise_has_unit_scale() {
        let mut cfg = flat(1);
        cfg.parameters[2].noise_std = 1.0;
        let run = generate(&cfg, 20_000_000, None).unwrap();
        let xs: Vec<f64> = run.frames.iter().map(|f| f.values[2].unwrap() - 100.0).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn worked_ground_truth_example() {
        let mut cfg = flat(1);
        cfg.degradation.push(DegradationProfile {
            parameter: ParameterId::ExtruderPressure,
            mode: DriftMode::Linear,
            rate: 1.0 / 1000.0,
            start_ms: 0,
            tau_ms: 1.0,
        });
        let env = pressure_env(160.0, 1);
        let b = env.bounds[0];
        assert_eq!(closed_form_onset(&cfg, 1, &b, 1, 100), Some(Some(11_000)));
        assert_eq!(scan_onset(&cfg, 1, &b, 1, 100), Some(11_000));
        assert_eq!(ground_truth_down_at(&cfg, &env, 100_000).unwrap(), Some(11_000));
        // D=3 keeps the onset, it only needs the run to fit
        assert_eq!(ground_truth_down_at(&cfg, &pressure_env(160.0, 3), 100_000).unwrap(), Some(11_000));
        assert_eq!(ground_truth_down_at(&cfg, &pressure_env(160.0, 3), 13_000).unwrap(), None);
    }

    #[test]
    fn no_drift_no_downtime() {
        let cfg = flat(1);
        assert_eq!(ground_truth_down_at(&cfg, &pressure_env(160.0, 3), 1_000_000).unwrap(), None);
    }

    #[test]
    fn reset_restarts_the_ramp() {
        let mut cfg = flat(1);
        cfg.degradation.push(DegradationProfile {
            parameter: ParameterId::ExtruderPressure,
            mode: DriftMode::Linear,
            rate: 1.0 / 1000.0,
            start_ms: 0,
            tau_ms: 1.0,
        });
        cfg.maintenance_resets = vec![8_000];
        let env = pressure_env(160.0, 1);
        assert_eq!(ground_truth_down_at(&cfg, &env, 100_000).unwrap(), Some(19_000));
        assert_eq!(scan_onset(&cfg, 1, &env.bounds[0], 1, 100), Some(19_000));
        let run = generate(&cfg, 10_000, None).unwrap();
        assert_eq!(run.frames[8].values[1], Some(150.0));
        assert_eq!(run.frames[9].values[1], Some(151.0));
    }

    #[test]
    fn injected_failure_steps_the_value() {
        let mut cfg = flat(1);
        cfg.injected_failure = Some(InjectedFailure { parameter: ParameterId::ExtruderPressure, time_ms: 5_000, offset: 20.0 });
        let env = pressure_env(160.0, 2);
        assert_eq!(ground_truth_down_at(&cfg, &env, 100_000).unwrap(), Some(5_000));
        cfg.maintenance_resets = vec![7_000];
        assert_eq!(ground_truth_down_at(&cfg, &env, 100_000).unwrap(), Some(5_000));
        cfg.maintenance_resets = vec![6_000];
        assert_eq!(ground_truth_down_at(&cfg, &env, 100_000).unwrap(), None);
    }

    #[test]
    fn exponential_drift_matches_formula() {
        let mut cfg = flat(1);
        cfg.degradation.push(DegradationProfile {
            parameter: ParameterId::MachineSpeed,
            mode: DriftMode::Exponential,
            rate: 2.0,
            start_ms: 3_000,
            tau_ms: 4_000.0,
        });
        let run = generate(&cfg, 10_000, None).unwrap();
        assert_eq!(run.frames[2].values[2], Some(100.0));
        assert_eq!(run.frames[7].values[2], Some(100.0 + 2.0 * (1.0f64.exp() - 1.0)));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SimConfig { sample_period_ms: 0, ..SimConfig::default() }, 10, None).is_err());
        let mut cfg = SimConfig::nominal(4);
        cfg.parameters[0].noise_std = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SimConfig::nominal(4);
        cfg.parameters.push(cfg.parameters[0]);
        assert!(cfg.validate().is_err());
        // omitted parameters fall back to nominal settings
        let mut cfg = SimConfig::nominal(2);
        cfg.parameters.retain(|p| p.parameter != ParameterId::MachineSpeed);
        cfg.validate().unwrap();
        assert_eq!(cfg.settings(2), SimConfig::nominal(2).parameters[2]);
        let cfg = SimConfig { zones: 1, ..SimConfig::default() };
        assert_eq!(generate(&cfg, 2000, None).unwrap().frames[0].values.len(), 5);
        assert!(generate(&SimConfig::default(), -1, None).is_err());
        assert_eq!(generate(&SimConfig::default(), 0, None).unwrap().frames.len(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn closed_form_matches_scan(
            rate in prop_oneof![-0.05f64..-1e-4, 1e-4f64..0.05],
            start in 0i64..20_000,
            upper in 151.0f64..200.0,
            lower in 100.0f64..149.0,
            d in 1usize..6,
            period in prop_oneof![Just(1000i64), Just(250), Just(777)],
            resets in proptest::collection::vec(0i64..200_000, 0..3),
        ) {
            let mut cfg = flat(1);
            cfg.sample_period_ms = period;
            cfg.maintenance_resets = resets;
            cfg.degradation.push(DegradationProfile {
                parameter: ParameterId::ExtruderPressure,
                mode: DriftMode::Linear,
                rate,
                start_ms: start,
                tau_ms: 1.0,
            });
            let b = ParameterBounds { parameter: ParameterId::ExtruderPressure, lower, upper };
            let n = 400;
            let closed = closed_form_onset(&cfg, 1, &b, d, n);
            prop_assert!(closed.is_some());
            prop_assert_eq!(closed.unwrap(), scan_onset(&cfg, 1, &b, d, n));
        }
    }
}
