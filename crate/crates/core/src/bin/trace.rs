use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use trace_core::clickstream::Task;
use trace_core::experiments::report::{ablation_table, comparison_table, latency_table, per_task_auroc};
use trace_core::experiments::tsne::{write_csv, write_svg};
use trace_core::experiments::{
    ablation_suite, bench_journey, latency_bench, run_comparison, tsne_project, tsne_sample, AblationResult,
    Comparison, Corpus, ExperimentConfig, LatencyReport, ModelSpec, RunManifest, Runner, Variant,
};
use trace_core::models::TraceConfig;
use trace_core::probe::compute_uplift;
use trace_core::synth::{write_corpus_dir, GeneratorConfig};
use trace_core::training::CHECKPOINT_FILE;
use trace_core::{Result, TraceError};

#[derive(Parser)]
#[command(name = "trace", about = "Clickstream journey embeddings: data, training, probes and experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root (corpus, models, reports, manifests).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model variant: trace, st-cohort, st-aggregated, lstm, mini-gpt, myopic.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Comma-separated probe tasks, e.g. PW2,BN5.
    #[arg(long, global = true, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic train/val/test corpus.
    Generate,
    /// Train the models behind one variant (default: every configured variant).
    Train,
    /// Write test-split embeddings of a trained variant.
    Embed,
    /// Probe a trained variant's embeddings against the myopic baseline.
    Probe,
    /// Train if needed, probe every variant and tabulate uplifts.
    Compare,
    /// Train and probe every ablation variant.
    Ablate,
    /// Single-journey latency per encoder depth.
    Bench,
    /// Project a stratified sample of embeddings to 2-D.
    Tsne,
    /// Render plain-text tables from saved reports.
    Report,
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = &c.tasks {
        cfg.tasks = t.iter().map(|s| Task::parse(s)).collect::<Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save_text(path: &std::path::Path, text: &str) -> Result<()> {
    std::fs::create_dir_all(path.parent().expect("report paths have a parent"))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn save_json<T: serde::Serialize>(path: &std::path::Path, v: &T) -> Result<()> {
    save_text(path, &serde_json::to_string_pretty(v)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: PathBuf, artifact: &str, hint: &str) -> Result<T> {
    let bytes = std::fs::read(&path).map_err(|_| TraceError::Missing {
        artifact: artifact.into(),
        path: path.clone(),
        hint: hint.into(),
    })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    let cfg = config(&cli.common)?;
    let reports = cfg.reports_dir();
    let name = match cli.cmd {
        Cmd::Generate => "generate",
        Cmd::Train => "train",
        Cmd::Embed => "embed",
        Cmd::Probe => "probe",
        Cmd::Compare => "compare",
        Cmd::Ablate => "ablate",
        Cmd::Bench => "bench",
        Cmd::Tsne => "tsne",
        Cmd::Report => "report",
    };
    if let Cmd::Generate = cli.cmd {
        let gen = GeneratorConfig::travel_default(cfg.seed);
        let manifest = write_corpus_dir(&gen, cfg.sizes, cfg.data_dir())?;
        println!("corpus written to {} (data hash {})", cfg.data_dir().display(), manifest.data_hash());
        let mut run = RunManifest::new(name, &cfg, Some(manifest.data_hash()));
        for f in manifest.files.values() {
            run.add_report(cfg.data_dir().join(&f.path));
        }
        run.finish(&cfg.out_dir, start.elapsed().as_secs_f64())?;
        return Ok(());
    }
    if let Cmd::Report = cli.cmd {
        let mut text = String::new();
        let cmp: Comparison = read_json(reports.join("comparison.json"), "comparison report", "compare")?;
        text += &comparison_table(&cmp);
        if cmp.reports.contains_key(&Variant::StCohort) {
            text += "\n";
            text += &per_task_auroc(&cmp, cmp.primary, Variant::StCohort);
        }
        if let Ok(a) = read_json::<AblationResult>(reports.join("ablation.json"), "", "") {
            text += "\n";
            text += &ablation_table(&a);
        }
        if let Ok(l) = read_json::<LatencyReport>(reports.join("latency.json"), "", "") {
            text += "\n";
            text += &latency_table(&l);
        }
        print!("{text}");
        let path = reports.join("report.txt");
        save_text(&path, &text)?;
        let mut run = RunManifest::new(name, &cfg, Some(cmp.data_hash));
        run.add_report(path);
        run.finish(&cfg.out_dir, start.elapsed().as_secs_f64())?;
        return Ok(());
    }

    let corpus = Corpus::load(cfg.data_dir())?;
    let mut runner = Runner::new(&cfg, &corpus);
    runner.verbose = true;
    let mut run = RunManifest::new(name, &cfg, Some(corpus.data_hash.clone()));
    let variant = cli.common.variant.unwrap_or(cfg.primary);
    match cli.cmd {
        Cmd::Train => {
            let variants = match cli.common.variant {
                Some(v) => vec![v],
                None => cfg.variants.clone(),
            };
            for v in variants {
                for t in runner.train_variant(v)? {
                    run.add_checkpoint(t.checkpoint);
                }
            }
        }
        Cmd::Embed => {
            let spec = match variant {
                Variant::Trace => ModelSpec::trace(),
                Variant::Lstm => ModelSpec::Lstm,
                Variant::MiniGpt => ModelSpec::MiniGpt,
                v => {
                    return Err(TraceError::Config(format!(
                        "`{v}` has no single embedding model; use trace, lstm or mini-gpt"
                    )))
                }
            };
            let t = runner.load(&spec)?;
            let emb = t.embed_split(&corpus.test)?;
            let mut out = String::new();
            for (e, v) in corpus.test.iter().zip(&emb) {
                out += &serde_json::json!({"user_id": e.user_id, "embedding": v}).to_string();
                out.push('\n');
            }
            let path = cfg.out_dir.join("embeddings").join(format!("{variant}.test.jsonl"));
            save_text(&path, &out)?;
            println!("{} embeddings written to {}", emb.len(), path.display());
            run.add_checkpoint(t.checkpoint);
            run.add_report(path);
        }
        Cmd::Probe => {
            let r = runner.probe(variant, false)?;
            let base = runner.probe(Variant::Myopic, false)?;
            let u = compute_uplift(&r, &base)?;
            for p in &r.tasks {
                println!(
                    "{:<4} AUROC {:.4}  AUPRC {:.4}  F1 {:.4}  Acc {:.4}",
                    p.task.name(),
                    p.metrics.auroc,
                    p.metrics.auprc,
                    p.metrics.f1,
                    p.metrics.acc
                );
            }
            println!("mean AUROC uplift vs myopic: {}", trace_core::experiments::report::fmt_uplift(u.mean[0]));
            let path = reports.join(format!("{variant}.probe.json"));
            save_json(&path, &serde_json::json!({"metrics": r, "baseline": base, "uplift": u}))?;
            run.add_report(path);
        }
        Cmd::Compare => {
            let cmp = run_comparison(&runner)?;
            let mut text = comparison_table(&cmp);
            if cmp.reports.contains_key(&Variant::StCohort) {
                text += "\n";
                text += &per_task_auroc(&cmp, cmp.primary, Variant::StCohort);
            }
            print!("{text}");
            let json = reports.join("comparison.json");
            save_json(&json, &cmp)?;
            save_text(&reports.join("comparison.txt"), &text)?;
            for v in cmp.reports.keys() {
                run.add_report(reports.join(format!("{v}.metrics.json")));
                for spec in runner.specs_for(*v) {
                    run.add_checkpoint(runner.model_dir(&spec).join(CHECKPOINT_FILE));
                }
            }
            run.add_report(json);
            run.add_report(reports.join("comparison.txt"));
        }
        Cmd::Ablate => {
            let a = ablation_suite(&cfg, &corpus, true)?;
            let text = ablation_table(&a);
            print!("{text}");
            for r in &a.rows {
                if let Some(p) = r.train_report.as_ref().and_then(|t| t.checkpoint.clone()) {
                    run.add_checkpoint(p);
                }
            }
            let json = reports.join("ablation.json");
            save_json(&json, &a)?;
            save_text(&reports.join("ablation.txt"), &text)?;
            run.add_report(json);
            run.add_report(reports.join("ablation.txt"));
        }
        Cmd::Bench => {
            let t = runner.load(&ModelSpec::trace())?;
            let base: TraceConfig = t.trace().expect("trace checkpoint").cfg.clone();
            let journey = bench_journey(&t.encoder, &corpus, &cfg.bench)?;
            let l = latency_bench(&base, &journey, &cfg.bench, cfg.seed)?;
            let text = latency_table(&l);
            print!("{text}");
            let json = reports.join("latency.json");
            save_json(&json, &l)?;
            run.add_checkpoint(t.checkpoint);
            run.add_report(json);
        }
        Cmd::Tsne => {
            let spec = match variant {
                Variant::Lstm => ModelSpec::Lstm,
                Variant::MiniGpt => ModelSpec::MiniGpt,
                _ => ModelSpec::trace(),
            };
            let t = runner.load(&spec)?;
            let (idx, labels) = tsne_sample(&corpus, &cfg.tsne)?;
            let picked: Vec<_> = idx.iter().map(|&i| corpus.test[i].clone()).collect();
            let r = tsne_project(&t.embed_split(&picked)?, &cfg.tsne)?;
            let dir = cfg.out_dir.join("tsne");
            std::fs::create_dir_all(&dir)?;
            let csv = dir.join(format!("{variant}.csv"));
            let svg = dir.join(format!("{variant}.svg"));
            write_csv(&csv, &r.coords, &labels)?;
            write_svg(&svg, &r.coords, &labels, &format!("{} embeddings by next page", variant.display()))?;
            let json = dir.join(format!("{variant}.kl.json"));
            save_json(&json, &r.kl)?;
            println!("{} points, final KL {:.4}; wrote {}", r.coords.len(), r.kl.last().map_or(f64::NAN, |k| k.1), csv.display());
            run.add_checkpoint(t.checkpoint);
            run.add_report(csv);
            run.add_report(svg);
            run.add_report(json);
        }
        Cmd::Generate | Cmd::Report => unreachable!(),
    }
    run.finish(&cfg.out_dir, start.elapsed().as_secs_f64())?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
