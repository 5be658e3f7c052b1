//! Gradient-boosted regression trees on the logistic loss.
//!
//! Each round fits a depth-bounded tree to the residuals `y − p` with exact
//! greedy variance-reduction splits, then sets each leaf to the Newton step
//! `Σr / Σp(1−p)` scaled by the learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TraceError};

/// Row-major feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(TraceError::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TraceError::shape("ragged feature rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Row indices sorted by each column's value (ascending, stable).
    pub fn sorted_columns(&self) -> Vec<Vec<u32>> {
        (0..self.cols)
            .map(|j| {
                let mut idx: Vec<u32> = (0..self.rows as u32).collect();
                idx.sort_by(|&a, &b| self.get(a as usize, j).total_cmp(&self.get(b as usize, j)));
                idx
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum rows on each side of a split.
    pub min_leaf: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GbdtModel {
    pub fn raw(&self, x: &[f64]) -> f64 {
        self.trees.iter().fold(self.init, |z, t| z + t.predict(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw(x))
    }

    pub fn predict_all(&self, m: &FeatureMatrix) -> Vec<f64> {
        (0..m.rows).map(|i| self.predict_proba(m.row(i))).collect()
    }

    /// Probabilities after the first `s` trees, for each `s` in `stages`.
    pub fn predict_staged(&self, m: &FeatureMatrix, stages: &[usize]) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(m.rows); stages.len()];
        let mut order: Vec<(usize, usize)> = stages
            .iter()
            .map(|&s| s.min(self.trees.len()))
            .enumerate()
            .collect();
        order.sort_by_key(|&(_, s)| s);
        for i in 0..m.rows {
            let x = m.row(i);
            let mut z = self.init;
            let mut done = 0;
            for &(slot, s) in &order {
                for t in &self.trees[done..s] {
                    z += t.predict(x);
                }
                done = s;
                out[slot].push(sigmoid(z));
            }
        }
        out
    }
}

/// Best split of one node found by the level scan.
#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Fits a boosted ensemble on the rows `subset` of `x`.
///
/// `sorted` must be [`FeatureMatrix::sorted_columns`] of `x`; rows outside
/// `subset` are skipped, which lets cross-validation reuse one sort.
pub fn fit_gbdt_on(
    x: &FeatureMatrix,
    sorted: &[Vec<u32>],
    y: &[bool],
    subset: &[usize],
    cfg: &GbdtConfig,
) -> Result<GbdtModel> {
    if y.len() != x.rows {
        return Err(TraceError::shape("one label per feature row required"));
    }
    if !(cfg.learning_rate > 0.0) || cfg.min_leaf == 0 {
        return Err(TraceError::config("learning_rate and min_leaf must be positive"));
    }
    let pos = subset.iter().filter(|&&i| y[i]).count();
    if pos == 0 || pos == subset.len() {
        return Err(TraceError::data("gbdt needs both classes in its training rows"));
    }
    let p0 = pos as f64 / subset.len() as f64;
    let init = (p0 / (1.0 - p0)).ln();

    let n = x.rows;
    const OUT: u32 = u32::MAX;
    // slot of each row in the current level's open-node list; OUT for rows not in the fit
    let mut in_fit = vec![false; n];
    for &i in subset {
        in_fit[i] = true;
    }
    let mut raw = vec![init; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut resid = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut slot = vec![OUT; n];
    let mut leaf_of = vec![0usize; n];

    for _ in 0..cfg.n_trees {
        for &i in subset {
            let p = sigmoid(raw[i]);
            resid[i] = f64::from(y[i] as u8) - p;
            hess[i] = p * (1.0 - p);
        }
        let mut nodes = vec![Node::Leaf(0.0)];
        // open nodes: tree node index per slot
        let mut open: Vec<usize> = vec![0];
        for &i in subset {
            slot[i] = 0;
        }
        for _depth in 0..cfg.max_depth {
            let k = open.len();
            let mut tot_s = vec![0.0; k];
            let mut tot_n = vec![0usize; k];
            for &i in subset {
                let s = slot[i];
                if s != OUT {
                    tot_s[s as usize] += resid[i];
                    tot_n[s as usize] += 1;
                }
            }
            let mut best: Vec<Option<Candidate>> = vec![None; k];
            let mut left_s = vec![0.0; k];
            let mut left_n = vec![0usize; k];
            let mut last = vec![f64::NAN; k];
            for (f, col) in sorted.iter().enumerate() {
                left_s.fill(0.0);
                left_n.fill(0);
                last.fill(f64::NAN);
                for &r in col {
                    let r = r as usize;
                    if !in_fit[r] || slot[r] == OUT {
                        continue;
                    }
                    let s = slot[r] as usize;
                    let v = x.get(r, f);
                    let nl = left_n[s];
                    let nr = tot_n[s] - nl;
                    if nl >= cfg.min_leaf && nr >= cfg.min_leaf && v > last[s] {
                        let sl = left_s[s];
                        let sr = tot_s[s] - sl;
                        let gain = sl * sl / nl as f64 + sr * sr / nr as f64
                            - tot_s[s] * tot_s[s] / tot_n[s] as f64;
                        if best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: 0.5 * (last[s] + v),
                            });
                        }
                    }
                    left_s[s] += resid[r];
                    left_n[s] += 1;
                    last[s] = v;
                }
            }
            let mut next_open = Vec::new();
            let mut remap = vec![OUT; k];
            let mut children = vec![(0u32, 0u32); k];
            for (s, cand) in best.iter().enumerate() {
                let Some(c) = cand.filter(|c| c.gain > 1e-12) else {
                    continue;
                };
                let l = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[open[s]] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: l,
                    right: l + 1,
                };
                remap[s] = 0;
                children[s] = (next_open.len() as u32, next_open.len() as u32 + 1);
                next_open.push(l);
                next_open.push(l + 1);
            }
            if next_open.is_empty() {
                break;
            }
            for &i in subset {
                let s = slot[i];
                if s == OUT {
                    continue;
                }
                let s = s as usize;
                if remap[s] == OUT {
                    // finalized as a leaf at this level
                    leaf_of[i] = open[s];
                    slot[i] = OUT;
                } else if let Node::Split { feature, threshold, .. } = nodes[open[s]] {
                    slot[i] = if x.get(i, feature) <= threshold {
                        children[s].0
                    } else {
                        children[s].1
                    };
                }
            }
            open = next_open;
        }
        for &i in subset {
            if slot[i] != OUT {
                leaf_of[i] = open[slot[i] as usize];
            }
        }
        let mut num = vec![0.0; nodes.len()];
        let mut den = vec![0.0; nodes.len()];
        for &i in subset {
            num[leaf_of[i]] += resid[i];
            den[leaf_of[i]] += hess[i];
        }
        for (j, node) in nodes.iter_mut().enumerate() {
            if let Node::Leaf(v) = node {
                *v = cfg.learning_rate * num[j] / den[j].max(1e-12);
            }
        }
        for &i in subset {
            if let Node::Leaf(v) = nodes[leaf_of[i]] {
                raw[i] += v;
            }
        }
        trees.push(Tree { nodes });
    }
    Ok(GbdtModel {
        init,
        learning_rate: cfg.learning_rate,
        trees,
    })
}

pub fn fit_gbdt(x: &FeatureMatrix, y: &[bool], cfg: &GbdtConfig) -> Result<GbdtModel> {
    let all: Vec<usize> = (0..x.rows).collect();
    fit_gbdt_on(x, &x.sorted_columns(), y, &all, cfg)
}

/// Mean logistic loss of probabilities `p` against `y`.
pub fn log_loss(p: &[f64], y: &[bool]) -> f64 {
    let eps = 1e-15;
    p.iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / p.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trees_predict_prior() {
        let x = FeatureMatrix::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = [true, false, false, false];
        let cfg = GbdtConfig {
            n_trees: 0,
            ..GbdtConfig::default()
        };
        let m = fit_gbdt(&x, &y, &cfg).unwrap();
        for p in m.predict_all(&x) {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = FeatureMatrix::new(2, 1, vec![1.0, 2.0]).unwrap();
        assert!(fit_gbdt(&x, &[true, true], &GbdtConfig::default()).is_err());
    }

    #[test]
    fn stump_separates_threshold_data() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 10.0).collect();
        let y: Vec<bool> = xs.iter().map(|&v| v > 7.3).collect();
        let x = FeatureMatrix::new(200, 1, xs).unwrap();
        let cfg = GbdtConfig {
            n_trees: 10,
            max_depth: 1,
            learning_rate: 0.3,
            min_leaf: 1,
        };
        let m = fit_gbdt(&x, &y, &cfg).unwrap();
        let p = m.predict_all(&x);
        let acc = p.iter().zip(&y).filter(|(p, y)| (**p >= 0.5) == **y).count() as f64 / 200.0;
        assert!(acc >= 0.99, "{acc}");
        assert!(m.trees.iter().all(|t| t.depth() <= 1));
        match m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert!((threshold - 7.35).abs() < 1e-12),
            _ => panic!("root should split"),
        }
    }

    #[test]
    fn staged_matches_truncated_models() {
        let xs: Vec<f64> = (0..60).map(|i| ((i * 37) % 60) as f64).collect();
        let y: Vec<bool> = (0..60).map(|i| (i * 7) % 3 == 0).collect();
        let x = FeatureMatrix::new(60, 1, xs).unwrap();
        let m = fit_gbdt(&x, &y, &GbdtConfig { n_trees: 8, ..GbdtConfig::default() }).unwrap();
        let staged = m.predict_staged(&x, &[8, 3]);
        let mut m3 = m.clone();
        m3.trees.truncate(3);
        assert_eq!(staged[0], m.predict_all(&x));
        assert_eq!(staged[1], m3.predict_all(&x));
    }
}
