//! Ranking and threshold metrics for binary scores.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default weight for [`f_beta`]: reproduces an F-score of 0.813 from
/// specificity 0.717 and recall 0.906.
pub const DEFAULT_BETA: f64 = 1.143;

/// F-score over specificity and recall:
/// `(1 + β²)·S·R / (β²·S + R)`.
///
/// `β = 0` yields `S`; `S = R = 0` yields 0.
pub fn f_beta(specificity: f64, recall: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return specificity;
    }
    let b2 = beta * beta;
    let den = b2 * specificity + recall;
    if den == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * specificity * recall / den
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn class_counts(targets: &[u8]) -> (usize, usize) {
    let pos = targets.iter().filter(|&&t| t == 1).count();
    (pos, targets.len() - pos)
}

fn check_inputs(scores: &[f64], targets: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != targets.len() {
        return Err(invalid("scores and targets differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("NaN score"));
    }
    let (pos, neg) = class_counts(targets);
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "AUC undefined: targets contain a single class".into(),
        ));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the Mann-Whitney rank statistic.
pub fn auc(scores: &[f64], targets: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, targets)?;
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t == 1)
        .map(|(r, _)| r)
        .sum();
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Step-wise area under the precision-recall curve, one step per
/// distinct score.
pub fn average_precision(scores: &[f64], targets: &[u8]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, targets)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if targets[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    /// Positive prediction when `score >= threshold`.
    pub fn at_threshold(scores: &[f64], targets: &[u8], threshold: f64) -> Self {
        let mut c = ConfusionMatrix::default();
        for (&s, &t) in scores.iter().zip(targets) {
            match (t == 1, s >= threshold) {
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (true, true) => c.tp += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Row-normalized matrix `[[tn, fp], [fn, tp]]`; each row sums to 1
    /// when it has any observations.
    pub fn normalized(&self) -> [[f64; 2]; 2] {
        let neg = self.tn + self.fp;
        let pos = self.fn_ + self.tp;
        [
            [ratio(self.tn, neg), ratio(self.fp, neg)],
            [ratio(self.fn_, pos), ratio(self.tp, pos)],
        ]
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub auc: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f_beta: f64,
    pub beta: f64,
    pub f1: f64,
    pub average_precision: f64,
    pub confusion: ConfusionMatrix,
    pub threshold: f64,
}

pub fn evaluate_scores(
    scores: &[f64],
    targets: &[u8],
    threshold: f64,
    beta: f64,
) -> Result<MetricReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("threshold {threshold} outside (0,1)")));
    }
    let auc = auc(scores, targets)?;
    let average_precision = average_precision(scores, targets)?;
    let confusion = ConfusionMatrix::at_threshold(scores, targets, threshold);
    let recall = confusion.recall();
    let specificity = confusion.specificity();
    Ok(MetricReport {
        n: scores.len(),
        auc,
        recall,
        specificity,
        f_beta: f_beta(specificity, recall, beta),
        beta,
        f1: confusion.f1(),
        average_precision,
        confusion,
        threshold,
    })
}
