//! Train TRACE on a freshly generated synthetic corpus and print the loss curve.
//!
//! ```text
//! cargo run --release -p trace-core --example train_trace -- [n_train] [epochs] [seed]
//! ```

use trace_core::clickstream::Task;
use trace_core::encoding::{JourneyEncoder, TimeFeatures, DEFAULT_MAX_LEN};
use trace_core::models::{InputConfig, TraceConfig, TraceModel};
use trace_core::synth::{GeneratorConfig, SplitSizes, SyntheticCorpus};
use trace_core::tensor::ParamStore;
use trace_core::training::{train_multitask, ClassWeights, EncodedSplit, TrainConfig};

fn main() -> trace_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_train: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4000);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let gen = GeneratorConfig::travel_default(seed);
    let sizes = SplitSizes {
        train: n_train,
        val: n_train / 4,
        test: 1,
    };
    let corpus = SyntheticCorpus::generate(&gen, sizes)?;
    let labeled = |v: &[trace_core::synth::SyntheticExample]| v.iter().map(|e| e.labeled.clone()).collect::<Vec<_>>();
    let (train, val) = (labeled(&corpus.train), labeled(&corpus.val));

    let enc = JourneyEncoder::fit(train.iter().map(|e| &e.example.input), DEFAULT_MAX_LEN, TimeFeatures::All)?;
    let train = EncodedSplit::encode(&train, &enc)?;
    let val = EncodedSplit::encode(&val, &enc)?;
    let weights = ClassWeights::compute(&train.labels, &Task::TRAINING)?;

    let mut model = TraceModel::new(TraceConfig::new(InputConfig::from_encoder(&enc)), seed)?;
    println!("parameters: {}", ParamStore::num_scalars(&model.store));
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let report = train_multitask(&mut model, &train, &val, &weights, &cfg, None)?;
    println!("initial train {:.4}  val {:.4}", report.initial_train_loss, report.initial_val_loss);
    for e in &report.epochs {
        println!(
            "epoch {:>2}  train {:.4}  val {:.4}  ({:.1}s)",
            e.epoch, e.train_loss, e.val_loss, e.seconds
        );
    }
    println!("best epoch {} (val {:.4})", report.best_epoch, report.best_val_loss);
    Ok(())
}
