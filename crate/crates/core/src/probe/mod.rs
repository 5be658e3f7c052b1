//! Probe evaluation of frozen journey embeddings: boosted-tree probes per
//! task, selected by stratified K-fold cross-validation, scored with
//! AUROC/AUPRC/F1/Acc and compared with a last-event-only baseline.

pub mod gbdt;
pub mod metrics;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clickstream::{Task, TaskLabelSet};
use crate::encoding::EncodedJourney;
use crate::error::{Result, TraceError};
use crate::synth::derive_seed;
use gbdt::{fit_gbdt_on, FeatureMatrix, GbdtConfig, GbdtModel};
use metrics::{auroc, TaskMetrics};

/// Hyperparameter grid searched per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub n_trees: Vec<usize>,
    pub min_leaf: usize,
    pub folds: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        ProbeGrid {
            max_depth: vec![2, 3, 4],
            learning_rate: vec![0.1, 0.3],
            n_trees: vec![50, 100],
            min_leaf: 5,
            folds: 5,
        }
    }
}

impl ProbeGrid {
    pub fn single(cfg: GbdtConfig, folds: usize) -> Self {
        ProbeGrid {
            max_depth: vec![cfg.max_depth],
            learning_rate: vec![cfg.learning_rate],
            n_trees: vec![cfg.n_trees],
            min_leaf: cfg.min_leaf,
            folds,
        }
    }

    /// Grid points in search order (depth, then rate, then tree count).
    pub fn points(&self) -> Vec<GbdtConfig> {
        let mut out = Vec::new();
        for &max_depth in &self.max_depth {
            for &learning_rate in &self.learning_rate {
                for &n_trees in &self.n_trees {
                    out.push(GbdtConfig {
                        n_trees,
                        max_depth,
                        learning_rate,
                        min_leaf: self.min_leaf,
                    });
                }
            }
        }
        out
    }
}

/// Stratified fold id per row: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || y.len() < k {
        return Err(TraceError::config(format!(
            "{k}-fold split needs k >= 2 and at least k rows (have {})",
            y.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    let mut next = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvResult {
    pub best: GbdtConfig,
    /// Mean validation AUROC per grid point, in [`ProbeGrid::points`] order.
    pub scores: Vec<(GbdtConfig, f64)>,
    /// Out-of-fold probabilities of the selected configuration.
    pub oof: Vec<f64>,
    /// Refit of the selected configuration on every row.
    pub model: GbdtModel,
}

/// Grid search by mean held-out AUROC over stratified folds, then refit on all rows.
pub fn kfold_cv_select(x: &FeatureMatrix, y: &[bool], grid: &ProbeGrid, seed: u64) -> Result<CvResult> {
    let points = grid.points();
    if points.is_empty() {
        return Err(TraceError::config("probe grid is empty"));
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos < grid.folds || y.len() - pos < grid.folds {
        return Err(TraceError::UndefinedMetric(format!(
            "need at least {} rows of each class for {}-fold CV (have {pos} positive of {})",
            grid.folds,
            grid.folds,
            y.len()
        )));
    }
    let fold = stratified_folds(y, grid.folds, seed)?;
    let sorted = x.sorted_columns();
    let mut sums = vec![0.0; points.len()];
    let mut oof = vec![vec![0.0; y.len()]; points.len()];

    // one fit per (depth, rate) at the largest tree count; smaller counts are staged predictions
    let mut stages: Vec<usize> = grid.n_trees.clone();
    stages.sort_unstable();
    stages.dedup();
    let max_trees = *stages.last().expect("non-empty grid");
    for k in 0..grid.folds {
        let train: Vec<usize> = (0..y.len()).filter(|&i| fold[i] != k).collect();
        let held: Vec<usize> = (0..y.len()).filter(|&i| fold[i] == k).collect();
        let held_x = FeatureMatrix::new(
            held.len(),
            x.cols,
            held.iter().flat_map(|&i| x.row(i).iter().copied()).collect(),
        )?;
        let held_y: Vec<bool> = held.iter().map(|&i| y[i]).collect();
        for &depth in &grid.max_depth {
            for &lr in &grid.learning_rate {
                let cfg = GbdtConfig {
                    n_trees: max_trees,
                    max_depth: depth,
                    learning_rate: lr,
                    min_leaf: grid.min_leaf,
                };
                let model = fit_gbdt_on(x, &sorted, y, &train, &cfg)?;
                let staged = model.predict_staged(&held_x, &stages);
                for (pi, p) in points.iter().enumerate() {
                    if p.max_depth != depth || p.learning_rate != lr {
                        continue;
                    }
                    let si = stages.iter().position(|&s| s == p.n_trees).expect("stage");
                    sums[pi] += auroc(&staged[si], &held_y)?;
                    for (j, &row) in held.iter().enumerate() {
                        oof[pi][row] = staged[si][j];
                    }
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..points.len() {
        if sums[i] > sums[best] {
            best = i;
        }
    }
    let all: Vec<usize> = (0..y.len()).collect();
    let model = fit_gbdt_on(x, &sorted, y, &all, &points[best])?;
    Ok(CvResult {
        best: points[best],
        scores: points
            .iter()
            .zip(&sums)
            .map(|(p, s)| (*p, s / grid.folds as f64))
            .collect(),
        oof: oof.swap_remove(best),
        model,
    })
}

/// One-hot categorical attributes plus the numeric features of the final event only.
pub fn myopic_features(journeys: &[&EncodedJourney], vocab_sizes: &[usize]) -> Result<FeatureMatrix> {
    let n_num = journeys.first().map_or(0, |j| j.n_numeric);
    let width: usize = vocab_sizes.iter().sum::<usize>() + n_num;
    let mut data = Vec::with_capacity(journeys.len() * width);
    for j in journeys {
        if j.true_length == 0 {
            return Err(TraceError::data("myopic features need a non-empty journey"));
        }
        if j.n_numeric != n_num || j.n_cat() != vocab_sizes.len() {
            return Err(TraceError::shape("journeys disagree on feature layout"));
        }
        let last = j.true_length - 1;
        let mut row = vec![0.0; width];
        let mut off = 0;
        for (&idx, &size) in j.cat_row(last).iter().zip(vocab_sizes) {
            if idx >= size {
                return Err(TraceError::shape(format!("index {idx} outside vocabulary of {size}")));
            }
            row[off + idx] = 1.0;
            off += size;
        }
        row[off..].copy_from_slice(j.num_row(last));
        data.extend(row);
    }
    FeatureMatrix::new(journeys.len(), width, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskProbe {
    pub task: Task,
    pub metrics: TaskMetrics,
    pub selected: GbdtConfig,
    pub cv_auroc: f64,
    pub prevalence: f64,
}

/// Per-task probe metrics for one embedding source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub source: String,
    pub rows: usize,
    pub tasks: Vec<TaskProbe>,
}

impl MetricsReport {
    pub fn get(&self, t: Task) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|p| p.task == t).map(|p| &p.metrics)
    }

    pub fn mean(&self) -> [f64; 4] {
        let n = self.tasks.len().max(1) as f64;
        let mut m = [0.0; 4];
        for p in &self.tasks {
            for (a, b) in m.iter_mut().zip(p.metrics.as_array()) {
                *a += b / n;
            }
        }
        m
    }
}

/// Probes `features` for each task; metrics come from out-of-fold predictions.
pub fn evaluate_features(
    source: &str,
    features: &FeatureMatrix,
    labels: &[TaskLabelSet],
    tasks: &[Task],
    grid: &ProbeGrid,
    seed: u64,
) -> Result<MetricsReport> {
    if features.rows != labels.len() {
        return Err(TraceError::shape("feature rows and labels differ in count"));
    }
    let mut out = Vec::with_capacity(tasks.len());
    for &t in tasks {
        let y: Vec<bool> = labels.iter().map(|l| l.get(t)).collect();
        let cv = kfold_cv_select(features, &y, grid, derive_seed(seed, t.index() as u64))?;
        let cv_auroc = cv
            .scores
            .iter()
            .find(|(c, _)| *c == cv.best)
            .map_or(f64::NAN, |(_, s)| *s);
        out.push(TaskProbe {
            task: t,
            metrics: TaskMetrics::compute(&cv.oof, &y)?,
            selected: cv.best,
            cv_auroc,
            prevalence: y.iter().filter(|&&v| v).count() as f64 / y.len() as f64,
        });
    }
    Ok(MetricsReport {
        source: source.to_string(),
        rows: features.rows,
        tasks: out,
    })
}

/// Percentage change of each metric relative to a baseline report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpliftReport {
    pub source: String,
    pub baseline: String,
    /// task → [AUROC, AUPRC, F1, Acc] uplift in percent; `None` when the baseline metric is 0.
    pub per_task: BTreeMap<String, [Option<f64>; 4]>,
    /// Mean over tasks of each defined uplift.
    pub mean: [Option<f64>; 4],
}

pub fn uplift(m: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| 100.0 * (m - base) / base)
}

pub fn compute_uplift(report: &MetricsReport, baseline: &MetricsReport) -> Result<UpliftReport> {
    let mut per_task = BTreeMap::new();
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for p in &report.tasks {
        let b = baseline.get(p.task).ok_or_else(|| {
            TraceError::data(format!("baseline has no result for task {}", p.task))
        })?;
        let row: [Option<f64>; 4] =
            std::array::from_fn(|i| uplift(p.metrics.as_array()[i], b.as_array()[i]));
        for i in 0..4 {
            if let Some(u) = row[i] {
                sums[i] += u;
                counts[i] += 1;
            }
        }
        per_task.insert(p.task.name().to_string(), row);
    }
    Ok(UpliftReport {
        source: report.source.clone(),
        baseline: baseline.source.clone(),
        per_task,
        mean: std::array::from_fn(|i| (counts[i] > 0).then(|| sums[i] / counts[i] as f64)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_and_stratify() {
        let y: Vec<bool> = (0..103).map(|i| i % 4 == 0).collect();
        let f = stratified_folds(&y, 5, 9).unwrap();
        let mut sizes = [0usize; 5];
        let mut pos = [0usize; 5];
        for (i, &k) in f.iter().enumerate() {
            sizes[k] += 1;
            pos[k] += y[i] as usize;
        }
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
    }

    #[test]
    fn single_point_grid_selects_it() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<bool> = (0..50).map(|i| i % 3 == 0 || i > 40).collect();
        let x = FeatureMatrix::new(50, 1, xs).unwrap();
        let cfg = GbdtConfig {
            n_trees: 5,
            max_depth: 2,
            learning_rate: 0.2,
            min_leaf: 2,
        };
        let r = kfold_cv_select(&x, &y, &ProbeGrid::single(cfg, 5), 1).unwrap();
        assert_eq!(r.best, cfg);
        assert_eq!(r.model.trees.len(), 5);
    }

    #[test]
    fn self_uplift_is_zero() {
        let m = MetricsReport {
            source: "a".into(),
            rows: 10,
            tasks: vec![TaskProbe {
                task: Task::Pw2,
                metrics: TaskMetrics {
                    auroc: 0.7,
                    auprc: 0.3,
                    f1: 0.0,
                    acc: 0.8,
                },
                selected: GbdtConfig::default(),
                cv_auroc: 0.7,
                prevalence: 0.1,
            }],
        };
        let u = compute_uplift(&m, &m).unwrap();
        assert_eq!(u.mean, [Some(0.0), Some(0.0), None, Some(0.0)]);
    }
}
