//! Built-in multinomial logistic regression, trained by full-batch gradient
//! descent with an L2 penalty on standardized features. Deterministic: zero
//! init, fixed iteration order, and an automatic step size from the softmax
//! smoothness bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, Mat};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearClassifierConfig {
    pub l2: f64,
    pub max_iters: usize,
    /// Convergence threshold on the gradient L2 norm.
    pub tol: f64,
    /// Step size; derived from the data when absent.
    pub lr: Option<f64>,
}

impl Default for LinearClassifierConfig {
    fn default() -> Self {
        LinearClassifierConfig {
            l2: 1e-3,
            max_iters: 2000,
            tol: 1e-6,
            lr: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearClassifier {
    pub classes: Vec<i64>,
    weights: Mat,
    bias: Vec<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearClassifier {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let xs = self.standardize(x);
        let mut out = self.bias.clone();
        self.weights.matvec_add(&xs, &mut out);
        out
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn class_probability(&self, x: &[f64], class: i64) -> f64 {
        match self.classes.iter().position(|&c| c == class) {
            Some(idx) => self.probabilities(x)[idx],
            None => 0.0,
        }
    }

    pub fn predict(&self, x: &[f64]) -> i64 {
        let probs = self.probabilities(x);
        let mut best = 0usize;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        self.classes[best]
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Mean cross-entropy plus the L2 penalty, with gradients w.r.t. the flat
/// `[weights, bias]` vector. Exposed for the gradient-check tests.
pub fn logistic_loss_and_grad(
    x: &[Vec<f64>],
    y_idx: &[usize],
    n_classes: usize,
    flat: &[f64],
    l2: f64,
) -> (f64, Vec<f64>) {
    let n = x.len();
    let d = x[0].len();
    debug_assert_eq!(flat.len(), n_classes * d + n_classes);
    let (w, b) = flat.split_at(n_classes * d);
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; flat.len()];
    for (xi, &yi) in x.iter().zip(y_idx) {
        let mut logits = vec![0.0f64; n_classes];
        for (c, logit) in logits.iter_mut().enumerate() {
            *logit = b[c] + dot(&w[c * d..(c + 1) * d], xi);
        }
        let probs = softmax(&logits);
        loss -= probs[yi].max(1e-300).ln();
        for c in 0..n_classes {
            let delta = probs[c] - if c == yi { 1.0 } else { 0.0 };
            for (j, &xj) in xi.iter().enumerate() {
                grad[c * d + j] += delta * xj;
            }
            grad[n_classes * d + c] += delta;
        }
    }
    loss /= n as f64;
    grad.iter_mut().for_each(|g| *g /= n as f64);
    // L2 on weights only
    let mut penalty = 0.0;
    for (k, &wk) in w.iter().enumerate() {
        penalty += wk * wk;
        grad[k] += l2 * wk;
    }
    (loss + 0.5 * l2 * penalty, grad)
}

/// Trains the classifier. Features are standardized with training-set
/// statistics; optimization is plain gradient descent until the gradient
/// norm drops below `tol` or `max_iters` is reached.
pub fn train_linear_classifier(
    x: &[Vec<f64>],
    y: &[i64],
    config: &LinearClassifierConfig,
) -> Result<LinearClassifier> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Invalid(format!(
            "bad training set: {} rows, {} labels",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    for row in x {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
    }
    let mut classes: Vec<i64> = y.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Degenerate("need at least two classes".into()));
    }
    let n_classes = classes.len();
    let y_idx: Vec<usize> = y
        .iter()
        .map(|label| classes.iter().position(|c| c == label).unwrap())
        .collect();

    // standardization statistics (population)
    let n = x.len() as f64;
    let mut mean = vec![0.0f64; d];
    for row in x {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0f64; d];
    for row in x {
        for ((s, &v), &m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut scale {
        *s = (*s / n).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let xs: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            row.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((&v, &m), &s)| (v - m) / s)
                .collect()
        })
        .collect();

    // smoothness bound of the softmax loss gives a safe fixed step size
    let lr = config.lr.unwrap_or_else(|| {
        let mean_sq: f64 = xs.iter().map(|r| dot(r, r) + 1.0).sum::<f64>() / n;
        1.0 / (0.5 * mean_sq + config.l2)
    });

    let mut flat = vec![0.0f64; n_classes * d + n_classes];
    for _ in 0..config.max_iters {
        let (_, grad) = logistic_loss_and_grad(&xs, &y_idx, n_classes, &flat, config.l2);
        let gnorm = crate::math::l2_norm(&grad);
        if gnorm < config.tol {
            break;
        }
        for (p, g) in flat.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
    }

    let (w, b) = flat.split_at(n_classes * d);
    Ok(LinearClassifier {
        classes,
        weights: Mat {
            rows: n_classes,
            cols: d,
            data: w.to_vec(),
        },
        bias: b.to_vec(),
        mean,
        scale,
    })
}
