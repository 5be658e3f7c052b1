//! Train TRACE, embed a sample stratified over the common next pages, and
//! write a 2-D t-SNE projection as CSV and SVG.
//!
//! ```text
//! cargo run --release -p trace-core --example tsne_projection -- [n_train] [epochs] [out_dir]
//! ```

use std::path::PathBuf;

use trace_core::experiments::tsne::{write_csv, write_svg};
use trace_core::experiments::{tsne_project, tsne_sample, Corpus, ExperimentConfig, ModelSpec, Runner};
use trace_core::synth::{write_corpus_dir, GeneratorConfig, SplitSizes};

fn main() -> trace_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(4000);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(3);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("trace-tsne"));

    let mut cfg = ExperimentConfig {
        out_dir: out.clone(),
        sizes: SplitSizes { train: n, val: n / 4, test: n / 2 },
        ..ExperimentConfig::default()
    };
    cfg.train.epochs = epochs;
    cfg.tsne.per_page = 25;
    write_corpus_dir(&GeneratorConfig::travel_default(cfg.seed), cfg.sizes, cfg.data_dir())?;
    let corpus = Corpus::load(cfg.data_dir())?;
    let mut runner = Runner::new(&cfg, &corpus);
    runner.verbose = true;
    let model = runner.train(&ModelSpec::trace())?;

    let (idx, labels) = tsne_sample(&corpus, &cfg.tsne)?;
    let picked: Vec<_> = idx.iter().map(|&i| corpus.test[i].clone()).collect();
    let result = tsne_project(&model.embed_split(&picked)?, &cfg.tsne)?;
    for (it, kl) in &result.kl {
        println!("iter {it:>4}  KL {kl:.4}");
    }
    write_csv(&out.join("tsne.csv"), &result.coords, &labels)?;
    write_svg(&out.join("tsne.svg"), &result.coords, &labels, "TRACE embeddings by next page")?;
    println!("wrote {} and tsne.svg", out.join("tsne.csv").display());
    Ok(())
}
