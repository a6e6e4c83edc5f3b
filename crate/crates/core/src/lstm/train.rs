use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::accumulate_sample;
use super::{batch_loss, LstmError, LstmParams, Result, Sample};
use crate::preprocess::WindowedDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Global-norm clip; `None` disables clipping.
    pub gradient_clip_norm: Option<f64>,
    pub batch_size: usize,
    pub hidden_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            gradient_clip_norm: Some(5.0),
            batch_size: 32,
            hidden_size: 32,
            rng_seed: 42,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(LstmError::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.hidden_size == 0 {
            return Err(LstmError::InvalidArgument("batch_size and hidden_size must be >= 1".into()));
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c > 0.0) {
                return Err(LstmError::InvalidArgument(format!("clip norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Loss curves of a training run plus the trained parameters.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean per-sample training MSE seen during each epoch.
    pub train_mse: Vec<f64>,
    /// Validation MSE after each epoch; empty when there is no validation split.
    pub validation_mse: Vec<f64>,
    pub wall_time: Duration,
    pub params: LstmParams,
}

impl TrainReport {
    /// `epoch,train_mse,validation_mse` with 1-based epochs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,validation_mse\n");
        for (e, t) in self.train_mse.iter().enumerate() {
            let v = self
                .validation_mse
                .get(e)
                .map(|v| format!("{v:?}"))
                .unwrap_or_default();
            out.push_str(&format!("{},{t:?},{v}\n", e + 1));
        }
        out
    }
}

/// Scales `g` by `min(1, clip / ||g||)`. Returns the norm before clipping.
pub fn clip_global_norm(g: &mut LstmParams, clip: f64) -> f64 {
    let norm = g.norm();
    if norm > clip && norm > 0.0 {
        g.scale(clip / norm);
    }
    norm
}

/// MSE over a whole dataset, summed in sample order.
pub fn evaluate_mse(ds: &WindowedDataset, params: &LstmParams) -> Result<f64> {
    if ds.is_empty() {
        return Err(LstmError::InvalidDataset("empty dataset".into()));
    }
    let batch: Vec<Sample<'_>> = ds
        .inputs
        .iter()
        .zip(&ds.targets)
        .map(|(w, t)| Sample::new(w, t))
        .collect();
    batch_loss(&batch, params)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn apply_update(params: &mut LstmParams, grads: &LstmParams, cfg: &TrainConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
            }
        }
        Optimizer::Adam { beta1, beta2, epsilon } => {
            adam.t += 1;
            let c1 = 1.0 - beta1.powi(adam.t);
            let c2 = 1.0 - beta2.powi(adam.t);
            let mut k = 0;
            for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (p, &g) in p.iter_mut().zip(g) {
                    let m = &mut adam.m[k];
                    let v = &mut adam.v[k];
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                    k += 1;
                }
            }
        }
    }
}

/// Trains a fresh model with minibatch gradient descent.
///
/// Weights are drawn from a ChaCha8 stream seeded with `cfg.rng_seed`, and the
/// same stream shuffles minibatches every epoch, so a run is a pure function
/// of its inputs and configuration.
pub fn train(train: &WindowedDataset, validation: &WindowedDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(LstmError::InvalidDataset("empty training set".into()));
    }
    let features = train.features;
    if !validation.is_empty() && validation.features != features {
        return Err(LstmError::Dimension {
            what: "validation features",
            expected: features,
            got: validation.features,
        });
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut params = LstmParams::init(features, cfg.hidden_size, features, &mut rng);
    let n_params = params.param_count();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };

    let samples: Vec<Sample<'_>> = train
        .inputs
        .iter()
        .zip(&train.targets)
        .map(|(w, t)| Sample::new(w, t))
        .collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut per_sample = vec![0.0; samples.len()];
    let mut train_mse = Vec::with_capacity(cfg.epochs);
    let mut validation_mse = Vec::with_capacity(cfg.epochs);
    let mut grads = LstmParams::zeros(features, cfg.hidden_size, features);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            grads.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
            let weight = 1.0 / chunk.len() as f64;
            for &k in chunk {
                per_sample[k] = accumulate_sample(&samples[k], &params, weight, &mut grads);
            }
            if let Some(clip) = cfg.gradient_clip_norm {
                clip_global_norm(&mut grads, clip);
            }
            apply_update(&mut params, &grads, cfg, &mut adam);
        }
        // Fixed-order reduction keeps the curve independent of shuffle order.
        train_mse.push(per_sample.iter().sum::<f64>() / per_sample.len() as f64);
        if !validation.is_empty() {
            validation_mse.push(evaluate_mse(validation, &params)?);
        }
        if !params.is_finite() {
            return Err(LstmError::InvalidArgument("training diverged to non-finite parameters".into()));
        }
    }

    Ok(TrainReport {
        train_mse,
        validation_mse,
        wall_time: started.elapsed(),
        params,
    })
}
