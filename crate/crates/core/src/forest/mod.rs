//! CART trees and bagged random forests.
//!
//! Trees split on `x[feature] <= threshold` with thresholds drawn from the
//! midpoints between adjacent distinct values, so the candidate set is
//! finite and the greedy search is exactly reproducible. Forests bag trees
//! over bootstrap resamples; tree `k` draws from its own stream seeded with
//! `rng_seed + k`, which makes the result independent of fitting order.

mod io;
mod split;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_forests, read_forest, save_forests, write_forest, FOREST_MAGIC, FOREST_VERSION};
pub use split::{find_best_split, midpoint, SplitCandidate, SplitRule, TIE_TOLERANCE};

use split::best_split_indices;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, ForestError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    /// Binary labels in `{0, 1}`; leaves hold the positive-class fraction.
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesPerSplit {
    All,
    /// `ceil(sqrt(n_features))`
    Sqrt,
    Count(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, width: usize) -> usize {
        match self {
            FeaturesPerSplit::All => width,
            FeaturesPerSplit::Sqrt => ((width as f64).sqrt().ceil() as usize).clamp(1, width.max(1)),
            FeaturesPerSplit::Count(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
    pub rng_seed: u64,
    pub task: Task,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 20,
            max_depth: 8,
            min_samples_leaf: 3,
            features_per_split: FeaturesPerSplit::All,
            bootstrap: true,
            rng_seed: 7,
            task: Task::Regression,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Internal {
        feature: usize,
        threshold: f64,
        /// Impurity decrease of the split (0 for nodes read from disk).
        score: f64,
        /// Training rows that reached this node (0 for nodes read from disk).
        samples: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn add_importance(&self, acc: &mut [f64]) {
        if let TreeNode::Internal {
            feature,
            score,
            samples,
            left,
            right,
            ..
        } = self
        {
            acc[*feature] += score * *samples as f64;
            left.add_importance(acc);
            right.add_importance(acc);
        }
    }
}

fn validate(samples: &[Vec<f64>], labels: &[f64], cfg: &ForestConfig) -> Result<usize> {
    if samples.is_empty() {
        return Err(ForestError::InvalidDataset("no samples".into()));
    }
    if samples.len() != labels.len() {
        return Err(ForestError::InvalidDataset(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    let width = samples[0].len();
    if let Some(row) = samples.iter().find(|r| r.len() != width) {
        return Err(ForestError::Dimension {
            expected: width,
            got: row.len(),
        });
    }
    if samples.iter().flatten().chain(labels).any(|v| !v.is_finite()) {
        return Err(ForestError::InvalidDataset("non-finite value".into()));
    }
    if cfg.task == Task::Classification && labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(ForestError::InvalidDataset("classification labels must be 0 or 1".into()));
    }
    if cfg.min_samples_leaf == 0 {
        return Err(ForestError::InvalidConfig("min_samples_leaf must be >= 1".into()));
    }
    if let FeaturesPerSplit::Count(k) = cfg.features_per_split {
        if k == 0 || k > width {
            return Err(ForestError::InvalidConfig(format!("features_per_split {k} outside 1..={width}")));
        }
    }
    Ok(width)
}

struct Grower<'a, R> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    cfg: &'a ForestConfig,
    width: usize,
    rng: &'a mut R,
}

impl<R: Rng> Grower<'_, R> {
    fn leaf(&self, idx: &[usize]) -> TreeNode {
        TreeNode::Leaf {
            value: idx.iter().map(|&i| self.y[i]).sum::<f64>() / idx.len() as f64,
        }
    }

    fn allowed(&mut self) -> Vec<usize> {
        let k = self.cfg.features_per_split.resolve(self.width);
        if k < self.width {
            let mut f = sample(self.rng, self.width, k).into_vec();
            f.sort_unstable();
            f
        } else {
            (0..self.width).collect()
        }
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> TreeNode {
        if depth >= self.cfg.max_depth || idx.len() < 2 * self.cfg.min_samples_leaf {
            return self.leaf(idx);
        }
        let allowed = self.allowed();
        let rule = SplitRule {
            task: self.cfg.task,
            min_samples_leaf: self.cfg.min_samples_leaf,
        };
        let Some(split) = best_split_indices(self.x, self.y, idx, &allowed, rule) else {
            return self.leaf(idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            score: split.score,
            samples: idx.len(),
            left: Box::new(self.grow(&l, depth + 1)),
            right: Box::new(self.grow(&r, depth + 1)),
        }
    }
}

/// Grows one CART tree on every row.
pub fn fit_tree<R: Rng>(samples: &[Vec<f64>], labels: &[f64], cfg: &ForestConfig, rng: &mut R) -> Result<TreeNode> {
    let width = validate(samples, labels, cfg)?;
    let idx: Vec<usize> = (0..samples.len()).collect();
    Ok(grow_on(samples, labels, cfg, width, &idx, rng))
}

fn grow_on<R: Rng>(x: &[Vec<f64>], y: &[f64], cfg: &ForestConfig, width: usize, idx: &[usize], rng: &mut R) -> TreeNode {
    Grower { x, y, cfg, width, rng }.grow(idx, 0)
}

/// A fitted ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<TreeNode>,
    pub task: Task,
    pub n_features: usize,
    /// Unnormalized per-feature sum of sample-weighted split scores.
    pub importance_totals: Vec<f64>,
}

pub fn fit_forest(samples: &[Vec<f64>], labels: &[f64], cfg: &ForestConfig) -> Result<Forest> {
    let width = validate(samples, labels, cfg)?;
    if cfg.n_trees == 0 {
        return Err(ForestError::InvalidConfig("n_trees must be >= 1".into()));
    }
    let n = samples.len();
    let trees: Vec<TreeNode> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(k as u64));
            let idx: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_on(samples, labels, cfg, width, &idx, &mut rng)
        })
        .collect();
    let mut importance_totals = vec![0.0; width];
    for t in &trees {
        t.add_importance(&mut importance_totals);
    }
    Ok(Forest {
        trees,
        task: cfg.task,
        n_features: width,
        importance_totals,
    })
}

impl Forest {
    /// Mean of the per-tree predictions.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(ForestError::Dimension {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Importances normalized to sum to 1; uniform if no split scored.
    pub fn feature_importance(&self) -> Vec<f64> {
        let total: f64 = self.importance_totals.iter().sum();
        if total > 0.0 {
            self.importance_totals.iter().map(|v| v / total).collect()
        } else {
            vec![1.0 / self.n_features as f64; self.n_features]
        }
    }
}
