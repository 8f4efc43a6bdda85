//! Logistic regression over the four per-node cost factors and their
//! three first-factor interactions, predicting whether pushing at a
//! node reduces overall cost.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The four per-node factors behind the benefit predictor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NodeCostFeatures {
    /// Tuples out of the node over tuples into it.
    pub cardinality_ratio: f64,
    /// Per-tuple cost of all factorized computations available there.
    pub factorized_cost: f64,
    /// Tuple width after the push over width before.
    pub tuple_dim_ratio: f64,
    /// Node level over tree height.
    pub depth_ratio: f64,
}

impl NodeCostFeatures {
    /// Design vector: the four factors plus the cardinality-ratio
    /// interactions (the pairs with non-negligible sensitivity).
    pub fn design(&self) -> [f64; 7] {
        let c = self.cardinality_ratio;
        [
            c,
            self.factorized_cost,
            self.tuple_dim_ratio,
            self.depth_ratio,
            c * self.factorized_cost,
            c * self.tuple_dim_ratio,
            c * self.depth_ratio,
        ]
    }
}

pub const FEATURE_COUNT: usize = 7;

/// Trained predictor: weights over standardized features + intercept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns the model was trained on (ablations drop some).
    pub active: Vec<usize>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Log-loss and its gradient over (weights..., intercept) for rows in
/// design space. Shared by training and the finite-difference check.
pub fn log_loss_and_grad(rows: &[Vec<f64>], labels: &[bool], w: &[f64]) -> (f64, Vec<f64>) {
    let n = rows.len() as f64;
    let k = rows[0].len();
    debug_assert_eq!(w.len(), k + 1);
    let mut loss = 0.0;
    let mut grad = vec![0.0; k + 1];
    for (row, &label) in rows.iter().zip(labels) {
        let mut z = w[k];
        for (x, wi) in row.iter().zip(w) {
            z += x * wi;
        }
        let p = sigmoid(z);
        let y = if label { 1.0 } else { 0.0 };
        let eps = 1e-12;
        loss -= y * (p + eps).ln() + (1.0 - y) * (1.0 - p + eps).ln();
        let err = p - y;
        for (g, x) in grad.iter_mut().zip(row) {
            *g += err * x;
        }
        grad[k] += err;
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    (loss, grad)
}

/// Batch gradient descent on log-loss over standardized features.
/// Deterministic for a fixed sample order. `active` selects design
/// columns (None = all seven).
pub fn train_logistic(
    features: &[NodeCostFeatures],
    labels: &[bool],
    epochs: usize,
    lr: f64,
    active: Option<&[usize]>,
) -> Result<LogisticModel> {
    if features.len() < 50 {
        return Err(Error::Cost(format!(
            "need at least 50 samples, got {}",
            features.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Cost("training data contains a single class".into()));
    }
    let active: Vec<usize> = match active {
        Some(a) => a.to_vec(),
        None => (0..FEATURE_COUNT).collect(),
    };
    let k = active.len();

    let raw: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let d = f.design();
            active.iter().map(|&i| d[i]).collect()
        })
        .collect();
    let n = raw.len() as f64;
    let mut means = vec![0.0; k];
    for row in &raw {
        for (m, x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut stds = vec![0.0; k];
    for row in &raw {
        for ((s, x), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (x - m) * (x - m);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt().max(1e-9);
    }
    let rows: Vec<Vec<f64>> = raw
        .iter()
        .map(|row| {
            row.iter()
                .zip(means.iter().zip(&stds))
                .map(|(x, (m, s))| (x - m) / s)
                .collect()
        })
        .collect();

    let mut w = vec![0.0f64; k + 1];
    for _ in 0..epochs {
        let (_, grad) = log_loss_and_grad(&rows, labels, &w);
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= lr * g;
        }
    }

    Ok(LogisticModel {
        weights: w[..k].to_vec(),
        intercept: w[k],
        means,
        stds,
        active,
    })
}

/// Probability that pushing at a node with these features pays off.
pub fn predict_benefit(features: &NodeCostFeatures, model: &LogisticModel) -> f64 {
    let d = features.design();
    let mut z = model.intercept;
    for (idx, (&col, w)) in model.active.iter().zip(&model.weights).enumerate() {
        z += w * (d[col] - model.means[idx]) / model.stds[idx];
    }
    sigmoid(z)
}

/// Fraction of correct predictions at the 0.5 threshold.
pub fn accuracy(features: &[NodeCostFeatures], labels: &[bool], model: &LogisticModel) -> f64 {
    let correct = features
        .iter()
        .zip(labels)
        .filter(|(f, &l)| (predict_benefit(f, model) >= 0.5) == l)
        .count();
    correct as f64 / features.len() as f64
}
