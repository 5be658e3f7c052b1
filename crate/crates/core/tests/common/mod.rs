//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use trace_core::catalog::{PageCatalog, PageCategory};
use trace_core::clickstream::{LabelConfig, PageViewEvent, TaskLabelSet};
use trace_core::dataset::LabeledExample;
use trace_core::encoding::{JourneyEncoder, TimeFeatures};
use trace_core::models::{GptConfig, InputConfig, LstmConfig, TraceConfig};
use trace_core::synth::{generate_examples, GeneratorConfig};

pub fn examples(n: usize, seed: u64) -> Vec<LabeledExample> {
    generate_examples(&GeneratorConfig::travel_default(seed), 0..n)
        .unwrap()
        .into_iter()
        .map(|e| e.labeled)
        .collect()
}

pub fn encoder(ex: &[LabeledExample], max_len: usize, tf: TimeFeatures) -> JourneyEncoder {
    JourneyEncoder::fit(ex.iter().map(|e| &e.example.input), max_len, tf).unwrap()
}

pub fn tiny_input(enc: &JourneyEncoder) -> InputConfig {
    InputConfig {
        cat_dim: 3,
        ..InputConfig::from_encoder(enc)
    }
}

pub fn tiny_trace(enc: &JourneyEncoder) -> TraceConfig {
    TraceConfig {
        d_model: 8,
        n_heads: 2,
        ffn_dim: 6,
        shared_hidden: 5,
        embed_dim: 4,
        ..TraceConfig::new(tiny_input(enc))
    }
}

pub fn tiny_lstm(enc: &JourneyEncoder) -> LstmConfig {
    LstmConfig {
        hidden: 4,
        shared_hidden: 5,
        embed_dim: 4,
        ..LstmConfig::new(tiny_input(enc))
    }
}

pub fn tiny_gpt(enc: &JourneyEncoder) -> GptConfig {
    GptConfig {
        d_model: 8,
        n_heads: 2,
        ffn_dim: 6,
        ..GptConfig::new(enc.vocabs.pages().size(), enc.max_len)
    }
}

/// Pairwise count with half credit for ties.
pub fn brute_auroc(s: &[f64], y: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                den += 1.0;
                if s[i] > s[j] {
                    num += 1.0;
                } else if s[i] == s[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Precision at each distinct threshold times the recall gained there.
pub fn brute_auprc(s: &[f64], y: &[bool]) -> f64 {
    let pos = y.iter().filter(|&&v| v).count() as f64;
    let mut th: Vec<f64> = s.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for t in th {
        let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i]).count() as f64;
        let pp = (0..s.len()).filter(|&i| s[i] >= t).count() as f64;
        let recall = tp / pos;
        area += (recall - prev_recall) * (tp / pp);
        prev_recall = recall;
    }
    area
}

/// Weighted binary cross-entropy of one logit: `-w·ln σ(z)` for a positive,
/// `-ln(1 − σ(z))` for a negative, with `-ln σ(z) = ln(1 + e^{-z})` evaluated
/// without overflow or cancellation.
pub fn scalar_bce(z: f64, y: bool, w: f64) -> f64 {
    let neg_log_sigmoid = |z: f64| if z >= 0.0 { (-z).exp().ln_1p() } else { -z + z.exp().ln_1p() };
    if y {
        w * neg_log_sigmoid(z)
    } else {
        neg_log_sigmoid(-z)
    }
}

/// Positives, predicted positives, true positives and correct calls at threshold `t`.
pub fn confusion_f1_acc(p: &[f64], y: &[bool], t: f64) -> (f64, f64) {
    let tp = (0..p.len()).filter(|&i| p[i] >= t && y[i]).count() as f64;
    let pred = p.iter().filter(|&&v| v >= t).count() as f64;
    let pos = y.iter().filter(|&&v| v).count() as f64;
    let correct = (0..p.len()).filter(|&i| (p[i] >= t) == y[i]).count() as f64;
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (pred + pos) };
    (f1, correct / p.len() as f64)
}

/// Exhaustive best `(feature, threshold, gain)` of a variance-reduction split
/// over residuals `r`, scanning features then thresholds in ascending order.
pub fn best_split(x: &[Vec<f64>], r: &[f64], min_leaf: usize) -> Option<(usize, f64, f64)> {
    let n = r.len();
    let total: f64 = r.iter().sum();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|row| row[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let left: Vec<usize> = (0..n).filter(|&i| x[i][f] <= t).collect();
            let (nl, nr) = (left.len(), n - left.len());
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let sl: f64 = left.iter().map(|&i| r[i]).sum();
            let sr = total - sl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - total * total / n as f64;
            if best.is_none_or(|b| gain > b.2) {
                best = Some((f, t, gain));
            }
        }
    }
    best
}

/// Labels by walking the flat event list: the current session is re-derived
/// from timestamps and the timeout instead of the stored session split.
pub fn walk_labels(
    events: &[PageViewEvent],
    split: usize,
    timeout: f64,
    catalog: &PageCatalog,
    cfg: &LabelConfig,
) -> TaskLabelSet {
    let split_time = events[split - 1].timestamp;
    let mut end = split;
    while end < events.len() && events[end].timestamp - events[end - 1].timestamp <= timeout {
        end += 1;
    }
    let current = &events[split..end];
    let cat = |c: PageCategory| current.iter().any(|e| catalog.category(&e.page_name) == Some(c));
    let session_end = events[end - 1].timestamp;
    let mut l = TaskLabelSet::default();
    for e in &events[split..] {
        if e.is_purchase && e.timestamp - split_time <= cfg.purchase_horizon {
            l.pw2 = true;
        }
    }
    l.bn5 = current.len() < cfg.bounce_events;
    l.srp = cat(PageCategory::SearchResults);
    l.pdp = cat(PageCategory::ProductDetail);
    l.vuo = cat(PageCategory::UpcomingOrder);
    l.hom = cat(PageCategory::Homepage);
    l.pws = current.iter().any(|e| e.is_purchase);
    l.re7 = events[end..]
        .iter()
        .any(|e| e.timestamp > session_end && e.timestamp - session_end <= cfg.return_window);
    l
}
