//! Exact t-SNE and the page-stratified sample it is run on.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TraceError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// `None` picks `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub momentum: f64,
    pub final_momentum: f64,
    /// Sampled journeys per next-page class.
    pub per_page: usize,
    /// Next pages shown; empty means the catalog's common pages.
    pub pages: Vec<String>,
    pub kl_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: None,
            momentum: 0.5,
            final_momentum: 0.8,
            per_page: 60,
            pages: vec![],
            kl_every: 50,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// `(iteration, KL(P‖Q))` checkpoints.
    pub kl: Vec<(usize, f64)>,
}

impl TsneResult {
    /// KL values recorded once exaggeration is off.
    pub fn kl_after_exaggeration(&self, cfg: &TsneConfig) -> Vec<f64> {
        self.kl
            .iter()
            .filter(|(i, _)| *i >= cfg.exaggeration_iters)
            .map(|(_, k)| *k)
            .collect()
    }
}

fn sq_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional affinities for one row with the precision found by bisection on entropy.
fn row_affinities(d: &[f64], i: usize, target_entropy: f64, out: &mut [f64]) {
    let (mut lo, mut hi, mut beta) = (0.0f64, f64::INFINITY, 1.0f64);
    let min_d = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut dsum = 0.0;
        for (j, &dj) in d.iter().enumerate() {
            let p = if j == i { 0.0 } else { (-(dj - min_d) * beta).exp() };
            out[j] = p;
            sum += p;
            dsum += p * (dj - min_d);
        }
        let h = sum.ln() + beta * dsum / sum;
        for p in out.iter_mut() {
            *p /= sum;
        }
        let diff = h - target_entropy;
        if diff.abs() < 1e-10 {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
}

fn joint_p(x: &[Vec<f64>], perplexity: f64) -> Vec<f64> {
    let n = x.len();
    let d = sq_distances(x);
    let mut cond = vec![0.0; n * n];
    let target = perplexity.ln();
    for i in 0..n {
        row_affinities(&d[i * n..(i + 1) * n], i, target, &mut cond[i * n..(i + 1) * n]);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }
    p
}

/// Student-t kernel numerators and their sum.
fn q_numerators(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let q = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = q;
            num[j * n + i] = q;
            z += 2.0 * q;
        }
    }
    z
}

fn kl(p: &[f64], num: &[f64], z: f64) -> f64 {
    let n = (p.len() as f64).sqrt() as usize;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let q = (num[i * n + j] / z).max(1e-12);
                s += pij * (pij / q).ln();
            }
        }
    }
    s
}

/// Embeds the rows of `x` in two dimensions.
pub fn tsne_project(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    let n = x.len();
    if n < 4 {
        return Err(TraceError::data("t-SNE needs at least four points"));
    }
    if !(cfg.perplexity > 0.0 && 3.0 * cfg.perplexity < n as f64) {
        return Err(TraceError::config(format!(
            "perplexity {} too large for {n} points",
            cfg.perplexity
        )));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TraceError::data("non-finite input to t-SNE"));
    }
    let p = joint_p(x, cfg.perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| (n as f64 / cfg.exaggeration.max(1.0) / 4.0).max(50.0));
    let mut history = Vec::new();
    for it in 0..cfg.iterations {
        let exag = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.exaggeration_iters { cfg.momentum } else { cfg.final_momentum };
        let z = q_numerators(&y, &mut num);
        if it % cfg.kl_every.max(1) == 0 {
            history.push((it, kl(&p, &num, z)));
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = (exag * p[i * n + j] - q / z) * q;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                let g = 4.0 * g[k];
                gains[i][k] = if (g > 0.0) != (update[i][k] > 0.0) {
                    gains[i][k] + 0.2
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                update[i][k] = momentum * update[i][k] - lr * gains[i][k] * g;
            }
        }
        let mut mean = [0.0; 2];
        for (yi, u) in y.iter_mut().zip(&update) {
            yi[0] += u[0];
            yi[1] += u[1];
            mean[0] += yi[0] / n as f64;
            mean[1] += yi[1] / n as f64;
        }
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
    }
    let z = q_numerators(&y, &mut num);
    history.push((cfg.iterations, kl(&p, &num, z)));
    Ok(TsneResult { coords: y, kl: history })
}

/// `per_label` random indices for each of `pages`, in page order.
pub fn stratified_sample(labels: &[Option<String>], pages: &[String], per_label: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pages.len() * per_label);
    for page in pages {
        let mut idx: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i].as_deref() == Some(page.as_str()))
            .collect();
        if idx.len() < per_label {
            return Err(TraceError::data(format!(
                "only {} journeys with next page `{page}`, need {per_label}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        idx.truncate(per_label);
        idx.sort_unstable();
        out.extend(idx);
    }
    Ok(out)
}

pub fn write_csv(path: &Path, coords: &[[f64; 2]], labels: &[String]) -> Result<()> {
    let mut s = String::from("x,y,label\n");
    for (c, l) in coords.iter().zip(labels) {
        writeln!(s, "{},{},{}", c[0], c[1], l).expect("write to string");
    }
    std::fs::write(path, s)?;
    Ok(())
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Scatter plot colored by label, with a legend.
pub fn write_svg(path: &Path, coords: &[[f64; 2]], labels: &[String], title: &str) -> Result<()> {
    let (w, h, pad) = (640.0, 640.0, 40.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for c in coords {
        x0 = x0.min(c[0]);
        x1 = x1.max(c[0]);
        y0 = y0.min(c[1]);
        y1 = y1.max(c[1]);
    }
    let sx = (w - 2.0 * pad) / (x1 - x0).max(1e-12);
    let sy = (h - 2.0 * pad) / (y1 - y0).max(1e-12);
    let mut classes: Vec<&str> = labels.iter().map(String::as_str).collect();
    classes.sort_unstable();
    classes.dedup();
    let color = |l: &str| PALETTE[classes.iter().position(|c| *c == l).unwrap_or(0) % PALETTE.len()];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"{pad}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        w + 160.0
    );
    for (c, l) in coords.iter().zip(labels) {
        writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.7\"/>",
            pad + (c[0] - x0) * sx,
            h - pad - (c[1] - y0) * sy,
            color(l)
        )
        .expect("write to string");
    }
    for (k, l) in classes.iter().enumerate() {
        let y = pad + 20.0 * k as f64;
        writeln!(
            s,
            "<circle cx=\"{}\" cy=\"{y}\" r=\"5\" fill=\"{}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{l}</text>",
            w + 10.0,
            color(l),
            w + 20.0,
            y + 4.0
        )
        .expect("write to string");
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
