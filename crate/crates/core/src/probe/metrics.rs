//! Ranking and threshold metrics for binary labels.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TraceError};

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(TraceError::shape("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(TraceError::UndefinedMetric(
            "ranking metric needs both classes".into(),
        ));
    }
    Ok((pos, neg))
}

/// Indices sorted by score, descending; NaN scores are rejected.
fn descending(scores: &[f64]) -> Result<Vec<usize>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TraceError::data("NaN score"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    Ok(idx)
}

/// Probability that a random positive outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let order = descending(scores)?;
    // ascending average ranks (1-based) of the positives
    let n = scores.len();
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // positions i..=j from the top are ranks n-j ..= n-i from the bottom
        let avg = ((n - j) + (n - i)) as f64 / 2.0;
        let p = order[i..=j].iter().filter(|&&r| labels[r]).count();
        rank_sum += avg * p as f64;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision: step sum of precision over recall increments at each distinct threshold.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = class_counts(scores, labels)?;
    let order = descending(scores)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut dtp = 0;
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                dtp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        tp += dtp;
        if dtp > 0 {
            area += (dtp as f64 / pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
        i = j;
    }
    Ok(area)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// `0` when nothing is predicted positive and nothing is positive.
    pub fn f1(&self) -> f64 {
        let d = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || d == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / d as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.tn + self.fn_;
        if n == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }
}

pub const DECISION_THRESHOLD: f64 = 0.5;

/// `(F1, accuracy)` at the 0.5 decision threshold.
pub fn f1_acc(probs: &[f64], labels: &[bool]) -> (f64, f64) {
    let c = Confusion::at(probs, labels, DECISION_THRESHOLD);
    (c.f1(), c.accuracy())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub auroc: f64,
    pub auprc: f64,
    pub f1: f64,
    pub acc: f64,
}

impl TaskMetrics {
    pub fn compute(probs: &[f64], labels: &[bool]) -> Result<Self> {
        let (f1, acc) = f1_acc(probs, labels);
        Ok(TaskMetrics {
            auroc: auroc(probs, labels)?,
            auprc: auprc(probs, labels)?,
            f1,
            acc,
        })
    }

    pub const NAMES: [&'static str; 4] = ["AUROC", "AUPRC", "F1", "Acc"];

    pub fn as_array(&self) -> [f64; 4] {
        [self.auroc, self.auprc, self.f1, self.acc]
    }
}
