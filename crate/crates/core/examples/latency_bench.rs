//! Single-journey forward latency for 1 to 4 encoder blocks at default widths.
//!
//! ```text
//! cargo run --release -p trace-core --example latency_bench -- [calls]
//! ```

use trace_core::encoding::{JourneyEncoder, TimeFeatures, DEFAULT_MAX_LEN};
use trace_core::experiments::latency::pick_journey;
use trace_core::experiments::report::latency_table;
use trace_core::experiments::{latency_bench, BenchConfig};
use trace_core::models::{InputConfig, TraceConfig};
use trace_core::synth::{generate_examples, GeneratorConfig};

fn main() -> trace_core::Result<()> {
    let calls: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2000);
    let examples: Vec<_> = generate_examples(&GeneratorConfig::travel_default(7), 0..2000)?
        .into_iter()
        .map(|e| e.labeled)
        .collect();
    let enc = JourneyEncoder::fit(examples.iter().map(|e| &e.example.input), DEFAULT_MAX_LEN, TimeFeatures::All)?;
    let encoded: Vec<_> = examples.iter().map(|e| enc.encode(&e.example.input)).collect::<Result<_, _>>()?;

    let cfg = BenchConfig { calls, ..BenchConfig::default() };
    let journey = &encoded[pick_journey(&encoded, cfg.journey_len).expect("non-empty")];
    let base = TraceConfig::new(InputConfig::from_encoder(&enc));
    let report = latency_bench(&base, journey, &cfg, 7)?;
    print!("{}", latency_table(&report));
    println!("monotone in depth: {}", report.is_monotone(0.0));
    Ok(())
}
