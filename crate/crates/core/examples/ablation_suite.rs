//! Position-encoding, depth and time-feature ablations on identical data,
//! with the input audit for each variant.
//!
//! ```text
//! cargo run --release -p trace-core --example ablation_suite -- [n_train] [epochs] [out_dir]
//! ```

use std::path::PathBuf;

use trace_core::experiments::report::ablation_table;
use trace_core::experiments::{ablation_suite, Corpus, ExperimentConfig};
use trace_core::synth::{write_corpus_dir, GeneratorConfig, SplitSizes};

fn main() -> trace_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trace-ablation"));

    let mut cfg = ExperimentConfig {
        out_dir: out,
        sizes: SplitSizes { train: n, val: n / 4, test: n / 4 },
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = epochs;
    write_corpus_dir(&GeneratorConfig::travel_default(cfg.seed), cfg.sizes, cfg.data_dir())?;
    let corpus = Corpus::load(cfg.data_dir())?;

    let result = ablation_suite(&cfg, &corpus, true)?;
    println!("\n{}", ablation_table(&result));
    println!("data hash {}", result.data_hash);
    for r in &result.rows {
        let a = &r.audit;
        println!(
            "{:<18} width {:>3}  numeric {:?}  session pos {}  timestamps used {}  invariant to re-timing {}",
            r.label,
            a.width,
            a.numeric,
            a.session_position,
            a.uses_timestamps(),
            r.timestamp_invariant
        );
    }
    Ok(())
}
