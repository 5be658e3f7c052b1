//! Central finite differences against reverse-mode gradients for a tiny
//! TRACE model, all parameters, dropout active with a fixed mask.
//!
//! ```text
//! cargo run --release -p trace-core --example gradient_check -- [seed]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trace_core::clickstream::Task;
use trace_core::encoding::{JourneyEncoder, TimeFeatures};
use trace_core::models::{InputConfig, TraceConfig, TraceModel};
use trace_core::synth::{generate_examples, GeneratorConfig};
use trace_core::tensor::gradcheck::check_params;
use trace_core::training::{multitask_batch_loss, ClassWeights, EncodedSplit};

fn main() -> trace_core::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1);
    let gen = GeneratorConfig::travel_default(seed);
    let examples: Vec<_> = generate_examples(&gen, 0..24)?.into_iter().map(|e| e.labeled).collect();
    let enc = JourneyEncoder::fit(examples.iter().map(|e| &e.example.input), 6, TimeFeatures::All)?;
    let split = EncodedSplit::encode(&examples[..4], &enc)?;
    let weights = ClassWeights::compute(&EncodedSplit::encode(&examples, &enc)?.labels, &Task::TRAINING)?;

    let mut input = InputConfig::from_encoder(&enc);
    input.cat_dim = 3;
    let cfg = TraceConfig {
        d_model: 8,
        n_heads: 2,
        ffn_dim: 6,
        shared_hidden: 5,
        embed_dim: 4,
        ..TraceConfig::new(input)
    };
    let model = TraceModel::new(cfg.clone(), seed)?;
    let batch = split.refs();
    let labels: Vec<_> = split.labels.iter().collect();

    let report = check_params(
        &model.store,
        |store, tape| {
            let m = TraceModel::from_store(cfg.clone(), store)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            multitask_batch_loss(&m, tape, &batch, &labels, &weights, true, &mut rng)
        },
        1e-5,
    )?;
    println!("checked {} parameter entries", report.checked);
    println!("max relative error {:.3e}", report.max_rel_err);
    if let Some((name, i, a, n)) = &report.worst {
        println!("worst: {name}[{i}] analytic {a:.6e} numeric {n:.6e}");
    }
    println!("{}", if report.passes(1e-4) { "PASS" } else { "FAIL" });
    Ok(())
}
