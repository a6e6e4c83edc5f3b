#![allow(dead_code)]

use std::sync::Arc;

use pdm_core::lstm::TrainConfig;
use pdm_core::pipeline::{default_forest_config, train_bundle, ModelBundle, PipelineConfig};
use pdm_core::sim::{generate, DegradationProfile, DriftMode, SimConfig};
use pdm_core::{ParameterId, PdmConfig, SensorReading};
use pdm_server::{spawn, AppState};
use reqwest::blocking::{Client, Response};
use serde_json::Value;

/// A live server on an ephemeral port, driven from a blocking client.
pub struct Live {
    pub base: String,
    pub state: Arc<AppState>,
    pub client: Client,
    _rt: tokio::runtime::Runtime,
}

impl Live {
    pub fn start(state: AppState) -> Live {
        let state = Arc::new(state);
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        let server = rt.block_on(spawn(state.clone(), "127.0.0.1:0")).unwrap();
        Live {
            base: format!("http://{}", server.addr),
            state,
            client: Client::new(),
            _rt: rt,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn get(&self, path: &str) -> Response {
        self.client.get(self.url(path)).send().unwrap()
    }

    pub fn post(&self, path: &str, body: &Value) -> Response {
        self.client.post(self.url(path)).json(body).send().unwrap()
    }

    pub fn put(&self, path: &str, body: &Value) -> Response {
        self.client.put(self.url(path)).json(body).send().unwrap()
    }

    pub fn ingest(&self, readings: &[SensorReading]) -> Value {
        let r = self.post("/api/v1/readings", &serde_json::to_value(readings).unwrap());
        assert_eq!(r.status(), 200);
        r.json().unwrap()
    }
}

/// Fixed clock far after any simulated timestamp.
pub const NOW: i64 = 10_000_000_000;

pub fn fixed_clock() -> pdm_server::Clock {
    Arc::new(|| NOW)
}

pub fn drifting_sim(seed: u64, rate_per_step: f64) -> SimConfig {
    let mut cfg = SimConfig::nominal(1);
    cfg.rng_seed = seed;
    for p in &mut cfg.parameters {
        p.noise_std = p.amplitude * 0.01;
    }
    cfg.degradation.push(DegradationProfile {
        parameter: ParameterId::ExtruderPressure,
        mode: DriftMode::Linear,
        rate: rate_per_step / 1000.0,
        start_ms: 0,
        tau_ms: 1.0,
    });
    cfg
}

pub fn small_model(sim: &SimConfig) -> ModelBundle {
    let run = generate(sim, 400_000, None).unwrap();
    let pc = PipelineConfig { window_len: 8, ..PipelineConfig::default() };
    let tc = TrainConfig { epochs: 3, hidden_size: 6, ..TrainConfig::default() };
    let fc = pdm_core::ForestConfig { n_trees: 3, max_depth: 4, ..default_forest_config() };
    train_bundle(sim.schema(), &[run.frames], &[vec![]], &pc, &tc, Some(&fc)).unwrap().bundle
}

pub fn config(sim: &SimConfig) -> PdmConfig {
    PdmConfig { sim: sim.clone(), ..PdmConfig::default() }
}

pub fn assert_api_error(r: Response, status: u16, code: &str) -> Value {
    assert_eq!(r.status().as_u16(), status);
    let body: Value = r.json().unwrap();
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert_eq!(body.as_object().unwrap().len(), 2);
    body
}
