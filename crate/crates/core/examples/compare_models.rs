//! Train every comparison model on one corpus and print the uplift table
//! and the per-task TRACE vs single-task AUROC.
//!
//! ```text
//! cargo run --release -p trace-core --example compare_models -- [n_train] [epochs] [out_dir]
//! ```

use std::path::PathBuf;

use trace_core::experiments::report::{comparison_table, per_task_auroc};
use trace_core::experiments::{run_comparison, Corpus, ExperimentConfig, Runner, Variant};
use trace_core::synth::{write_corpus_dir, GeneratorConfig, SplitSizes};

fn main() -> trace_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trace-compare"));

    let mut cfg = ExperimentConfig {
        out_dir: out,
        sizes: SplitSizes { train: n, val: n / 4, test: n / 4 },
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = epochs;
    write_corpus_dir(&GeneratorConfig::travel_default(cfg.seed), cfg.sizes, cfg.data_dir())?;

    let corpus = Corpus::load(cfg.data_dir())?;
    let mut runner = Runner::new(&cfg, &corpus);
    runner.verbose = true;
    let cmp = run_comparison(&runner)?;
    println!("\n{}", comparison_table(&cmp));
    println!("{}", per_task_auroc(&cmp, Variant::Trace, Variant::StCohort));
    Ok(())
}
