//! Single-journey inference latency as a function of encoder depth.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::encoding::EncodedJourney;
use crate::error::{Result, TraceError};
use crate::models::{MultiTaskNet, PackedBatch, TraceConfig, TraceModel};
use crate::tensor::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub calls: usize,
    pub warmup: usize,
    pub encoders: Vec<usize>,
    pub budget_ms: f64,
    /// Preferred journey length; the test journey closest to it is timed.
    pub journey_len: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            calls: 10_000,
            warmup: 100,
            encoders: vec![1, 2, 3, 4],
            budget_ms: 100.0,
            journey_len: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub n_encoders: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub p99_ms: f64,
    pub calls: usize,
    pub within_budget: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub journey_events: usize,
    pub budget_ms: f64,
    pub rows: Vec<LatencyRow>,
}

impl LatencyReport {
    /// Mean latency never decreases with depth, allowing `slack_ms` of timer noise.
    pub fn is_monotone(&self, slack_ms: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_ms + slack_ms >= w[0].mean_ms)
    }

    pub fn all_within_budget(&self) -> bool {
        self.rows.iter().all(|r| r.within_budget)
    }
}

/// Index of the journey whose true length is closest to `target` (first on ties).
pub fn pick_journey(journeys: &[EncodedJourney], target: usize) -> Option<usize> {
    journeys
        .iter()
        .enumerate()
        .min_by_key(|(_, j)| j.true_length.abs_diff(target))
        .map(|(i, _)| i)
}

/// Times the full forward pass (embedding and heads) on one journey for
/// each depth in `cfg.encoders`; encoding is done once, outside the timer.
pub fn latency_bench(base: &TraceConfig, journey: &EncodedJourney, cfg: &BenchConfig, seed: u64) -> Result<LatencyReport> {
    if cfg.calls == 0 {
        return Err(TraceError::config("bench needs at least one call"));
    }
    let batch = PackedBatch::pack(&[journey])?;
    let mut rows = Vec::new();
    for &h in &cfg.encoders {
        let model = TraceModel::new(
            TraceConfig {
                n_encoders: h,
                ..base.clone()
            },
            seed,
        )?;
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut run = || -> Result<()> {
            let mut tape = Tape::new();
            let (_, logits) = model.forward(&mut tape, &batch, false, &mut rng)?;
            std::hint::black_box(tape.value(logits).data()[0]);
            Ok(())
        };
        for _ in 0..cfg.warmup {
            run()?;
        }
        let mut ms = Vec::with_capacity(cfg.calls);
        for _ in 0..cfg.calls {
            let t = Instant::now();
            run()?;
            ms.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let std = (ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        ms.sort_by(f64::total_cmp);
        let p99 = ms[((0.99 * n).ceil() as usize).clamp(1, ms.len()) - 1];
        rows.push(LatencyRow {
            n_encoders: h,
            mean_ms: mean,
            std_ms: std,
            p99_ms: p99,
            calls: cfg.calls,
            within_budget: mean < cfg.budget_ms,
        });
    }
    Ok(LatencyReport {
        journey_events: journey.true_length,
        budget_ms: cfg.budget_ms,
        rows,
    })
}
