//! Plain-text tables for comparison, ablation and latency results.

use std::fmt::Write as _;

use super::latency::LatencyReport;
use super::pipeline::{AblationResult, Comparison, ModelSpec};
use super::Variant;
use crate::encoding::TimeFeatures;
use crate::probe::metrics::TaskMetrics;
use crate::probe::uplift;

pub fn fmt_uplift(u: Option<f64>) -> String {
    u.map_or_else(|| "n/a".to_string(), |v| format!("{v:+.2}%"))
}

/// Mean metrics and mean uplift over the myopic baseline, one row per variant.
pub fn comparison_table(c: &Comparison) -> String {
    let mut s = String::new();
    let head = TaskMetrics::NAMES;
    writeln!(
        s,
        "{:<14} {:>7} {:>7} {:>7} {:>7} | {:>9} {:>9} {:>9} {:>9}",
        "model", head[0], head[1], head[2], head[3], "dAUROC", "dAUPRC", "dF1", "dAcc"
    )
    .unwrap();
    for v in Variant::ALL {
        let (Some(r), Some(u)) = (c.reports.get(&v), c.uplifts.get(&v)) else {
            continue;
        };
        let m = r.mean();
        write!(s, "{:<14} {:>7.4} {:>7.4} {:>7.4} {:>7.4} |", v.display(), m[0], m[1], m[2], m[3]).unwrap();
        for x in u.mean {
            write!(s, " {:>9}", fmt_uplift(x)).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Per-task AUROC of `a` and `b` and the uplift of `a` over `b`.
pub fn per_task_auroc(c: &Comparison, a: Variant, b: Variant) -> String {
    let mut s = String::new();
    let (Some(ra), Some(rb)) = (c.reports.get(&a), c.reports.get(&b)) else {
        return s;
    };
    writeln!(s, "{:<6} {:>14} {:>14} {:>9}", "task", a.display(), b.display(), "uplift").unwrap();
    for p in &ra.tasks {
        let Some(mb) = rb.get(p.task) else { continue };
        writeln!(
            s,
            "{:<6} {:>14.4} {:>14.4} {:>9}",
            p.task.name(),
            p.metrics.auroc,
            mb.auroc,
            fmt_uplift(uplift(p.metrics.auroc, mb.auroc))
        )
        .unwrap();
    }
    s
}

pub fn ablation_table(a: &AblationResult) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<20} {:>6} {:>3} {:>10} {:>9} {:>9} {:>9} {:>9}",
        "variant", "pos", "h", "time", "dAUROC", "dAUPRC", "dF1", "dAcc"
    )
    .unwrap();
    for r in &a.rows {
        let (pos, h, time) = match &r.spec {
            ModelSpec::Trace {
                n_encoders,
                trig_position,
                time_features,
            } => (
                if *trig_position { "Trig." } else { "Event" },
                *n_encoders,
                match time_features {
                    TimeFeatures::All => "all",
                    TimeFeatures::NoSession => "no-session",
                    TimeFeatures::NoTime => "no-time",
                },
            ),
            _ => ("-", 0, "-"),
        };
        write!(s, "{:<20} {:>6} {:>3} {:>10}", r.label, pos, h, time).unwrap();
        for x in r.uplift.mean {
            write!(s, " {:>9}", fmt_uplift(x)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn latency_table(l: &LatencyReport) -> String {
    let mut s = String::new();
    writeln!(s, "journey events: {}, budget {} ms", l.journey_events, l.budget_ms).unwrap();
    writeln!(s, "{:>3} {:>10} {:>10} {:>10} {:>8}", "h", "mean ms", "std ms", "p99 ms", "budget").unwrap();
    for r in &l.rows {
        writeln!(
            s,
            "{:>3} {:>10.3} {:>10.3} {:>10.3} {:>8}",
            r.n_encoders,
            r.mean_ms,
            r.std_ms,
            r.p99_ms,
            if r.within_budget { "ok" } else { "OVER" }
        )
        .unwrap();
    }
    s
}
