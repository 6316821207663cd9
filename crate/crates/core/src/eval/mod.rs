//! Downstream evaluation harness: ROC-AUC and accuracy metrics, a built-in
//! linear classifier, stratified k-fold cross-validation, a throughput
//! benchmark, and the figure-of-merit report.

mod bench;
mod fom;
mod linear;

pub use bench::{throughput_benchmark, BenchResult};
pub use fom::fom_report;
pub use linear::{train_linear_classifier, LinearClassifier, LinearClassifierConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::mix_seed;

/// Probability that a random positive outranks a random negative; ties count
/// one half. Computed from midranks, which makes it exactly equal to the
/// pairwise counting definition.
pub fn roc_auc(scores: &[f64], labels: &[i64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "scores ({}) and labels ({}) length mismatch",
            scores.len(),
            labels.len()
        )));
    }
    let mut n_pos = 0u64;
    let mut n_neg = 0u64;
    for (&label, &score) in labels.iter().zip(scores) {
        if !score.is_finite() {
            return Err(Error::Invalid("non-finite score".into()));
        }
        match label {
            1 => n_pos += 1,
            0 => n_neg += 1,
            other => {
                return Err(Error::Invalid(format!(
                    "labels must be 0 or 1 for ROC-AUC, got {other}"
                )));
            }
        }
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(
            "ROC-AUC needs both classes present".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // midranks over tie groups; ranks are half-integers, exact in f64
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = n_pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * n_neg as f64))
}

/// Brute-force pairwise ROC-AUC; the oracle the rank-based version is
/// checked against.
pub fn roc_auc_pairwise(scores: &[f64], labels: &[i64]) -> Result<f64> {
    let mut wins = 0u64;
    let mut ties = 0u64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1;
            } else if scores[i] == scores[j] {
                ties += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Degenerate("ROC-AUC needs both classes present".into()));
    }
    Ok((wins as f64 + 0.5 * ties as f64) / pairs as f64)
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[i64], labels: &[i64]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "preds ({}) and labels ({}) length mismatch",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Degenerate("empty prediction list".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    RocAuc,
    Accuracy,
}

/// Cross-validated downstream result for one embedding variant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub variant: String,
    pub metric: MetricName,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    fn from_folds(task: &str, variant: &str, metric: MetricName, per_fold: Vec<f64>) -> Self {
        let n = per_fold.len() as f64;
        let mean = per_fold.iter().sum::<f64>() / n;
        let var = per_fold.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        EvalReport {
            task: task.to_string(),
            variant: variant.to_string(),
            metric,
            per_fold,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Stratified fold assignment: indices grouped by class, shuffled under the
/// seed, and dealt round-robin. Returns `fold_of[i]` for every sample.
pub fn stratified_folds(labels: &[i64], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::config("eval.k", "need k >= 2"));
    }
    let mut by_class: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    for (class, members) in &by_class {
        if members.len() < k {
            return Err(Error::Invalid(format!(
                "class {class} has only {} member(s), fewer than k={k}",
                members.len()
            )));
        }
    }
    let mut fold_of = vec![0usize; labels.len()];
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 0xf01d));
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        for (slot, idx) in members.into_iter().enumerate() {
            fold_of[idx] = slot % k;
        }
    }
    Ok(fold_of)
}

/// Runs stratified k-fold cross-validation of the built-in linear classifier
/// on one embedding matrix. Binary tasks report ROC-AUC, multiclass tasks
/// accuracy, summarized as mean ± population std over folds.
pub fn kfold_evaluate(
    embeddings: &[Vec<f64>],
    labels: &[i64],
    k: usize,
    seed: u64,
    task: &str,
    variant: &str,
) -> Result<EvalReport> {
    if embeddings.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "embeddings ({}) and labels ({}) length mismatch",
            embeddings.len(),
            labels.len()
        )));
    }
    let fold_of = stratified_folds(labels, k, seed)?;
    let classes: std::collections::BTreeSet<i64> = labels.iter().copied().collect();
    let binary = classes.len() == 2;
    let metric = if binary { MetricName::RocAuc } else { MetricName::Accuracy };
    let config = LinearClassifierConfig::default();

    let mut per_fold = Vec::with_capacity(k);
    for fold in 0..k {
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        let mut test_x = Vec::new();
        let mut test_y = Vec::new();
        for i in 0..labels.len() {
            if fold_of[i] == fold {
                test_x.push(embeddings[i].clone());
                test_y.push(labels[i]);
            } else {
                train_x.push(embeddings[i].clone());
                train_y.push(labels[i]);
            }
        }
        let model = train_linear_classifier(&train_x, &train_y, &config)?;
        let value = if binary {
            let positive = *classes.iter().max().unwrap();
            let scores: Vec<f64> = test_x.iter().map(|x| model.class_probability(x, positive)).collect();
            let bin_labels: Vec<i64> = test_y.iter().map(|&l| i64::from(l == positive)).collect();
            roc_auc(&scores, &bin_labels)?
        } else {
            let preds: Vec<i64> = test_x.iter().map(|x| model.predict(x)).collect();
            accuracy(&preds, &test_y)?
        };
        per_fold.push(value);
    }
    Ok(EvalReport::from_folds(task, variant, metric, per_fold))
}

/// Single train/test split score with the same conventions as
/// `kfold_evaluate`; used for the held-out partition.
pub fn holdout_score(
    train_x: &[Vec<f64>],
    train_y: &[i64],
    test_x: &[Vec<f64>],
    test_y: &[i64],
) -> Result<(MetricName, f64)> {
    let model = train_linear_classifier(train_x, train_y, &LinearClassifierConfig::default())?;
    let classes: std::collections::BTreeSet<i64> = train_y.iter().copied().collect();
    if classes.len() == 2 {
        let positive = *classes.iter().max().unwrap();
        let scores: Vec<f64> = test_x.iter().map(|x| model.class_probability(x, positive)).collect();
        let bin: Vec<i64> = test_y.iter().map(|&l| i64::from(l == positive)).collect();
        Ok((MetricName::RocAuc, roc_auc(&scores, &bin)?))
    } else {
        let preds: Vec<i64> = test_x.iter().map(|x| model.predict(x)).collect();
        Ok((MetricName::Accuracy, accuracy(&preds, test_y)?))
    }
}
