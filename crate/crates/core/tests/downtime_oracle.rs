use pdm_core::downtime::{forecast_downtime, DowntimeError, Forecaster};
use pdm_core::sim::{generate, ground_truth_down_at, DegradationProfile, DriftMode, SimConfig};
use pdm_core::{OperatingEnvelope, ParameterBounds, ParameterId};
use proptest::prelude::*;

/// Forecaster that knows the simulator: returns the noise-free future.
struct Clairvoyant {
    cfg: SimConfig,
    now_ms: i64,
}

impl Forecaster for Clairvoyant {
    fn name(&self) -> &str {
        "clairvoyant"
    }
    fn history_len(&self) -> usize {
        1
    }
    fn features(&self) -> usize {
        self.cfg.schema().width()
    }
    fn forecast(&self, _history: &[Vec<f64>], steps: usize) -> Result<Vec<Vec<f64>>, DowntimeError> {
        Ok((1..=steps as i64)
            .map(|k| {
                let t = self.now_ms + k * self.cfg.sample_period_ms;
                (0..self.features()).map(|s| self.cfg.clean_value(s, t)).collect()
            })
            .collect())
    }
}

fn drifting(rate_per_step: f64, amplitude: f64, mode: DriftMode) -> SimConfig {
    let mut cfg = SimConfig::nominal(2);
    for p in &mut cfg.parameters {
        p.noise_std = 0.0;
        if p.parameter == ParameterId::ExtruderPressure {
            p.amplitude = amplitude;
        }
    }
    cfg.degradation.push(DegradationProfile {
        parameter: ParameterId::ExtruderPressure,
        mode,
        rate: rate_per_step / cfg.sample_period_ms as f64,
        start_ms: 5_000,
        tau_ms: 60_000.0,
    });
    cfg
}

fn envelope(upper: f64, sustain: usize) -> OperatingEnvelope {
    OperatingEnvelope::new(sustain, vec![ParameterBounds { parameter: ParameterId::ExtruderPressure, lower: 0.0, upper }]).unwrap()
}

fn predict(cfg: &SimConfig, env: &OperatingEnvelope, now_ms: i64, horizon: usize) -> Option<i64> {
    let run = generate(cfg, now_ms + 1, None).unwrap();
    let oracle = Clairvoyant { cfg: cfg.clone(), now_ms };
    let f = forecast_downtime("M", &run.frames, cfg.sample_period_ms, &[&oracle], env, cfg.schema(), horizon).unwrap();
    assert!(f.is_consistent());
    f.predicted_down_at_ms
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // a perfect forecast reproduces the simulator's ground truth exactly
    #[test]
    fn perfect_forecast_hits_ground_truth(
        rate in 0.05..2.0f64,
        amplitude in 0.0..4.0f64,
        exponential in any::<bool>(),
        sustain in 1usize..5,
        now_steps in 5i64..40,
    ) {
        let mode = if exponential { DriftMode::Exponential } else { DriftMode::Linear };
        let cfg = drifting(rate, amplitude, mode);
        let env = envelope(165.0, sustain);
        let now = now_steps * 1000;
        prop_assume!(cfg.clean_value(1, now) <= 165.0 - amplitude.abs());
        let horizon = 400;
        let truth = ground_truth_down_at(&cfg, &env, now + (horizon as i64 + 1) * 1000).unwrap();
        let within = truth.filter(|&t| t > now && t <= now + (horizon - sustain + 1) as i64 * 1000);
        prop_assume!(truth.is_none() || truth.unwrap() > now);
        prop_assert_eq!(predict(&cfg, &env, now, horizon), within);
    }

    // pointwise-higher trajectories can only exit earlier
    #[test]
    fn faster_drift_never_predicts_later(
        slow in 0.02..1.0f64,
        factor in 1.0..4.0f64,
        amplitude in 0.0..3.0f64,
        sustain in 1usize..4,
    ) {
        let env = envelope(170.0, sustain);
        let a = predict(&drifting(slow, amplitude, DriftMode::Linear), &env, 3000, 2000);
        let b = predict(&drifting(slow * factor, amplitude, DriftMode::Linear), &env, 3000, 2000);
        if let Some(a) = a {
            prop_assert!(b.is_some_and(|b| b <= a), "slow {a}, fast {b:?}");
        }
    }
}

#[test]
fn worked_linear_case() {
    // 150 + 0.5/step from t=5 s crosses 160 strictly after step 25
    let cfg = drifting(0.5, 0.0, DriftMode::Linear);
    let env = envelope(160.0, 3);
    assert_eq!(ground_truth_down_at(&cfg, &env, 100_000).unwrap(), Some(26_000));
    assert_eq!(predict(&cfg, &env, 10_000, 30), Some(26_000));
    // horizon too short for the sustained run
    assert_eq!(predict(&cfg, &env, 10_000, 17), None);
    assert_eq!(predict(&cfg, &env, 10_000, 18), Some(26_000));
}
