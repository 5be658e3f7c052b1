//! Generate a synthetic clickstream corpus and print its label statistics.
//!
//! ```text
//! cargo run --release -p trace-core --example generate_corpus -- [n_users] [seed]
//! ```

use trace_core::clickstream::Task;
use trace_core::dataset::label_prevalence;
use trace_core::synth::{generate_examples, GeneratorConfig};

fn main() -> trace_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20_000);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let cfg = GeneratorConfig::travel_default(seed);
    let examples = generate_examples(&cfg, 0..n)?;
    let labeled: Vec<_> = examples.iter().map(|e| e.labeled.clone()).collect();

    let total: usize = examples.iter().map(|e| e.record.events.len()).sum();
    let input: usize = labeled.iter().map(|e| e.example.input.num_events()).sum();
    let sessions: usize = labeled.iter().map(|e| e.example.input.sessions.len()).sum();
    println!("journeys            {n}");
    println!("mean events/journey {:.1}", total as f64 / n as f64);
    println!("mean input events   {:.1}", input as f64 / n as f64);
    println!("mean input sessions {:.2}", sessions as f64 / n as f64);
    println!("expected purchase rate per session {:.4}", cfg.expected_purchase_rate());

    println!("\nlabel prevalence");
    for (t, p) in Task::ALL.iter().zip(label_prevalence(&labeled)) {
        println!("  {t}  {p:.3}");
    }

    println!("\nPW2 rate by latent state at the split");
    for (k, name) in cfg.states.iter().enumerate() {
        let in_state: Vec<_> = examples.iter().filter(|e| e.split_state == k).collect();
        let pos = in_state.iter().filter(|e| e.labeled.labels.pw2).count();
        println!(
            "  {name:<15} n={:<6} pw2={:.3}",
            in_state.len(),
            pos as f64 / in_state.len().max(1) as f64
        );
    }
    Ok(())
}
