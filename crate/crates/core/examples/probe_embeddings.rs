//! Train TRACE briefly, freeze it, and probe its test-split embeddings with
//! gradient-boosted trees next to the myopic last-event baseline.
//!
//! ```text
//! cargo run --release -p trace-core --example probe_embeddings -- [n_train] [epochs] [seed]
//! ```

use trace_core::clickstream::Task;
use trace_core::encoding::{JourneyEncoder, TimeFeatures, DEFAULT_MAX_LEN};
use trace_core::models::{InputConfig, JourneyEmbedder, TraceConfig, TraceModel};
use trace_core::probe::gbdt::FeatureMatrix;
use trace_core::probe::{compute_uplift, evaluate_features, myopic_features, ProbeGrid};
use trace_core::synth::{GeneratorConfig, SplitSizes, SyntheticCorpus};
use trace_core::training::{train_multitask, ClassWeights, EncodedSplit, TrainConfig};

fn main() -> trace_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_train: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4000);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let sizes = SplitSizes {
        train: n_train,
        val: n_train / 4,
        test: n_train / 4,
    };
    let corpus = SyntheticCorpus::generate(&GeneratorConfig::travel_default(seed), sizes)?;
    let take = |v: &[trace_core::synth::SyntheticExample]| v.iter().map(|e| e.labeled.clone()).collect::<Vec<_>>();
    let (train, val, test) = (take(&corpus.train), take(&corpus.val), take(&corpus.test));

    let enc = JourneyEncoder::fit(train.iter().map(|e| &e.example.input), DEFAULT_MAX_LEN, TimeFeatures::All)?;
    let (train, val, test) = (
        EncodedSplit::encode(&train, &enc)?,
        EncodedSplit::encode(&val, &enc)?,
        EncodedSplit::encode(&test, &enc)?,
    );
    let weights = ClassWeights::compute(&train.labels, &Task::TRAINING)?;
    let mut model = TraceModel::new(TraceConfig::new(InputConfig::from_encoder(&enc)), seed)?;
    let cfg = TrainConfig { epochs, seed, ..TrainConfig::default() };
    let report = train_multitask(&mut model, &train, &val, &weights, &cfg, None)?;
    println!("trained {} epochs, best val loss {:.4}", report.epochs.len(), report.best_val_loss);

    // quick probe grid; the experiment runner uses the full one
    let grid = ProbeGrid {
        max_depth: vec![3],
        learning_rate: vec![0.1],
        n_trees: vec![100],
        ..ProbeGrid::default()
    };
    let emb = FeatureMatrix::from_rows(&model.embed(&test.refs())?)?;
    let trace = evaluate_features("trace", &emb, &test.labels, &Task::ALL, &grid, seed)?;
    let myopic = myopic_features(&test.refs(), &enc.vocabs.sizes())?;
    let base = evaluate_features("myopic", &myopic, &test.labels, &Task::ALL, &grid, seed)?;
    let up = compute_uplift(&trace, &base)?;

    println!("\ntask  prev   TRACE  myopic  uplift");
    for p in &trace.tasks {
        let b = base.get(p.task).expect("same tasks");
        println!(
            "{:<4} {:.3}  {:.4}  {:.4}  {:+.2}%",
            p.task.name(),
            p.prevalence,
            p.metrics.auroc,
            b.auroc,
            up.per_task[p.task.name()][0].unwrap_or(f64::NAN)
        );
    }
    println!("mean AUROC uplift {:+.2}%", up.mean[0].unwrap_or(f64::NAN));
    Ok(())
}
