//! Exhaustive best-split search over midpoint thresholds.

use serde::{Deserialize, Serialize};

use super::Task;

/// Scores closer than this (relative) count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Impurity decrease: variance (regression) or Gini (classification).
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRule {
    pub task: Task,
    pub min_samples_leaf: usize,
}

impl SplitRule {
    pub fn new(task: Task) -> Self {
        SplitRule {
            task,
            min_samples_leaf: 1,
        }
    }
}

/// Threshold between two distinct adjacent sorted values, guaranteed to
/// satisfy `lo <= t < hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi {
        lo
    } else {
        m
    }
}

/// Impurity of a node from label sum, sum of squares and count. Labels are
/// expected to be centered for regression to limit cancellation.
fn impurity(task: Task, sum: f64, sum_sq: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    match task {
        Task::Regression => (sum_sq / n - (sum / n) * (sum / n)).max(0.0),
        Task::Classification => {
            let p = sum / n;
            2.0 * p * (1.0 - p)
        }
    }
}

/// Smallest score treated as a real improvement for a node of the given impurity.
pub(crate) fn min_positive(parent_impurity: f64) -> f64 {
    1e-12 * parent_impurity.max(1.0)
}

pub(crate) fn better(score: f64, best: f64) -> bool {
    score > best + TIE_TOLERANCE * best.abs().max(1.0)
}

/// Best split of the rows `idx`, scanning `allowed` features in ascending
/// order and thresholds ascending, keeping the first of any tie.
pub(crate) fn best_split_indices(
    x: &[Vec<f64>],
    y: &[f64],
    idx: &[usize],
    allowed: &[usize],
    rule: SplitRule,
) -> Option<SplitCandidate> {
    let n = idx.len();
    let min_leaf = rule.min_samples_leaf.max(1);
    if n < 2 || n < 2 * min_leaf {
        return None;
    }
    let offset = match rule.task {
        Task::Regression => idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64,
        Task::Classification => 0.0,
    };
    let (mut total, mut total_sq) = (0.0, 0.0);
    for &i in idx {
        let v = y[i] - offset;
        total += v;
        total_sq += v * v;
    }
    let nf = n as f64;
    let parent = impurity(rule.task, total, total_sq, nf);
    let floor = min_positive(parent);

    let mut features = allowed.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<SplitCandidate> = None;
    let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &feature in &features {
        order.clear();
        order.extend(idx.iter().map(|&i| (x[i][feature], y[i] - offset)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut left, mut left_sq) = (0.0, 0.0);
        for k in 0..n - 1 {
            let (v, label) = order[k];
            left += label;
            left_sq += label * label;
            let next = order[k + 1].0;
            if next == v {
                continue;
            }
            let n_left = k + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let (nl, nr) = (n_left as f64, n_right as f64);
            let score = parent
                - nl / nf * impurity(rule.task, left, left_sq, nl)
                - nr / nf * impurity(rule.task, total - left, total_sq - left_sq, nr);
            if score <= floor {
                continue;
            }
            if best.is_none_or(|b| better(score, b.score)) {
                best = Some(SplitCandidate {
                    feature,
                    threshold: midpoint(v, next),
                    score,
                });
            }
        }
    }
    best
}

/// Best split over all rows. Returns `None` when no split improves impurity.
pub fn find_best_split(samples: &[Vec<f64>], labels: &[f64], allowed: &[usize], rule: SplitRule) -> Option<SplitCandidate> {
    let idx: Vec<usize> = (0..samples.len().min(labels.len())).collect();
    best_split_indices(samples, labels, &idx, allowed, rule)
}
