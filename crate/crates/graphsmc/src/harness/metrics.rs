//! Binary classification metrics: confusion counts, accuracy, sensitivity,
//! specificity (class 1 is the positive class) and rank-statistic AUC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with class 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl ConfusionCounts {
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Self {
        let mut counts = ConfusionCounts::default();
        for &(label, predicted) in pairs {
            match (label, predicted) {
                (1, 1) => counts.true_positive += 1,
                (0, 0) => counts.true_negative += 1,
                (0, 1) => counts.false_positive += 1,
                _ => counts.false_negative += 1,
            }
        }
        counts
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.true_negative + self.false_positive + self.false_negative
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.true_positive + self.true_negative, self.total())
    }

    /// TP/(TP+FN); 0 when no positives exist.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.true_positive, self.true_positive + self.false_negative)
    }

    /// TN/(TN+FP); 0 when no negatives exist.
    pub fn specificity(&self) -> f64 {
        ratio(self.true_negative, self.true_negative + self.false_positive)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// AUC as the Mann-Whitney rank statistic over class-1 scores, with
/// average ranks on ties. Equals the area under the ROC curve.
pub fn auc(scores: &[(f64, usize)]) -> Result<f64> {
    let positives = scores.iter().filter(|(_, l)| *l == 1).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::input("AUC needs at least one sample of each class"));
    }
    for (s, _) in scores {
        if !s.is_finite() {
            return Err(Error::numerical(format!("non-finite score {s}")));
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.partial_cmp(&scores[b].0).unwrap());
    let mut rank_sum_positive = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average rank.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if scores[idx].1 == 1 {
                rank_sum_positive += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = positives as f64;
    let nn = negatives as f64;
    Ok((rank_sum_positive - np * (np + 1.0) / 2.0) / (np * nn))
}

/// One fold's evaluation results.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub auc: f64,
    pub counts: ConfusionCounts,
}

impl FoldMetrics {
    pub fn from_predictions(
        fold: usize,
        pairs: &[(usize, usize)],
        scores: &[(f64, usize)],
    ) -> Result<Self> {
        let counts = ConfusionCounts::from_pairs(pairs);
        Ok(FoldMetrics {
            fold,
            accuracy: counts.accuracy(),
            sensitivity: counts.sensitivity(),
            specificity: counts.specificity(),
            auc: auc(scores)?,
            counts,
        })
    }
}

/// Cross-validation summary: per-fold metrics plus mean and sample
/// standard deviation of each metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::input("metrics report needs at least one fold"));
        }
        let columns: [Vec<f64>; 4] = [
            folds.iter().map(|f| f.accuracy).collect(),
            folds.iter().map(|f| f.sensitivity).collect(),
            folds.iter().map(|f| f.specificity).collect(),
            folds.iter().map(|f| f.auc).collect(),
        ];
        let mut mean = [0.0; 4];
        let mut std = [0.0; 4];
        for (i, col) in columns.iter().enumerate() {
            let (m, s) = mean_and_std(col);
            mean[i] = m;
            std[i] = s;
        }
        Ok(MetricsReport { folds, mean, std })
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.mean[0]
    }

    pub fn mean_auc(&self) -> f64 {
        self.mean[3]
    }
}
