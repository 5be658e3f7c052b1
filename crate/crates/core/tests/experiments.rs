mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trace_core::clickstream::Task;
use trace_core::encoding::TimeFeatures;
use trace_core::experiments::tsne::stratified_sample;
use trace_core::experiments::{
    ablation_suite, latency_bench, run_comparison, tsne_project, AblationConfig, BenchConfig, Corpus,
    ExperimentConfig, ModelSpec, Runner, TsneConfig, Variant,
};
use trace_core::models::TraceConfig;
use trace_core::probe::ProbeGrid;
use trace_core::synth::{write_corpus_dir, GeneratorConfig, SplitSizes};
use trace_core::training::{EncodedSplit, TrainConfig};

fn blobs(per: usize, k: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
    centers
        .iter()
        .flat_map(|c| (0..per).map(|_| c.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).collect::<Vec<_>>())
        .collect()
}

fn small_tsne() -> TsneConfig {
    TsneConfig {
        perplexity: 10.0,
        iterations: 500,
        ..TsneConfig::default()
    }
}

#[test]
fn tsne_is_deterministic_and_kl_settles() {
    let x = blobs(20, 3, 6, 1);
    let cfg = small_tsne();
    let a = tsne_project(&x, &cfg).unwrap();
    let b = tsne_project(&x, &cfg).unwrap();
    assert_eq!(a, b);
    let kl = a.kl_after_exaggeration(&cfg);
    assert!(kl.len() >= 5);
    assert!(kl.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{kl:?}");
    let other = tsne_project(&x, &TsneConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.coords, other.coords);
}

#[test]
fn duplicated_rows_land_together() {
    let mut x = blobs(20, 3, 6, 2);
    x.push(x[5].clone());
    let r = tsne_project(&x, &small_tsne()).unwrap();
    let d = |i: usize, j: usize| ((r.coords[i][0] - r.coords[j][0]).powi(2) + (r.coords[i][1] - r.coords[j][1]).powi(2)).sqrt();
    let dup = d(5, x.len() - 1);
    let mut all: Vec<f64> = (0..x.len()).flat_map(|i| (i + 1..x.len()).map(move |j| (i, j))).map(|(i, j)| d(i, j)).collect();
    all.sort_by(f64::total_cmp);
    let median = all[all.len() / 2];
    assert!(dup < 0.01 * median, "duplicate pair {dup}, median distance {median}");
}

#[test]
fn tsne_rejects_bad_inputs() {
    let x = blobs(2, 1, 3, 3);
    assert!(tsne_project(&x, &small_tsne()).is_err());
    let mut x = blobs(20, 2, 3, 3);
    x[0][0] = f64::NAN;
    assert!(tsne_project(&x, &small_tsne()).is_err());
}

#[test]
fn stratified_sample_draws_exactly_per_page() {
    let ex = common::examples(3000, 4);
    let next: Vec<Option<String>> = ex.iter().map(|e| e.example.next_page().map(str::to_string)).collect();
    let pages: Vec<String> = trace_core::catalog::PageCatalog::travel_default()
        .common_pages()
        .into_iter()
        .map(str::to_string)
        .collect();
    assert_eq!(pages.len(), 7);
    let idx = stratified_sample(&next, &pages, 25, 4).unwrap();
    assert_eq!(idx.len(), 7 * 25);
    for (k, page) in pages.iter().enumerate() {
        let block = &idx[k * 25..(k + 1) * 25];
        assert!(block.iter().all(|&i| next[i].as_deref() == Some(page.as_str())));
        assert!(block.windows(2).all(|w| w[0] < w[1]));
    }
    assert_eq!(idx, stratified_sample(&next, &pages, 25, 4).unwrap());
    assert!(stratified_sample(&next, &pages, 100_000, 4).is_err());
}

#[test]
fn latency_grows_with_depth() {
    let ex = common::examples(50, 5);
    let enc = common::encoder(&ex, 100, TimeFeatures::All);
    let s = EncodedSplit::encode(&ex, &enc).unwrap();
    let j = s.journeys.iter().max_by_key(|j| j.true_length).unwrap();
    let base = TraceConfig::new(trace_core::models::InputConfig::from_encoder(&enc));
    let cfg = BenchConfig {
        calls: 200,
        warmup: 20,
        ..BenchConfig::default()
    };
    let r = latency_bench(&base, j, &cfg, 5).unwrap();
    assert_eq!(r.rows.len(), 4);
    assert!(r.all_within_budget());
    assert!(r.is_monotone(0.0), "{:?}", r.rows.iter().map(|x| x.mean_ms).collect::<Vec<_>>());
    assert!(r.rows.iter().all(|x| x.p99_ms >= x.mean_ms * 0.5 && x.calls == 200));
}

fn tiny_experiment(name: &str) -> (ExperimentConfig, Corpus) {
    let dir = std::env::temp_dir().join(format!("trace-exp-{name}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    let sizes = SplitSizes {
        train: 400,
        val: 100,
        test: 300,
    };
    let cfg = ExperimentConfig {
        seed: 3,
        out_dir: dir.clone(),
        sizes,
        max_len: 30,
        train: TrainConfig {
            epochs: 1,
            batch_size: 32,
            ..TrainConfig::default()
        },
        probe: ProbeGrid {
            max_depth: vec![2],
            learning_rate: vec![0.3],
            n_trees: vec![20],
            min_leaf: 5,
            folds: 3,
        },
        tasks: vec![Task::Pw2, Task::Bn5, Task::Srp],
        variants: vec![Variant::Trace, Variant::Myopic, Variant::Lstm],
        ablation: AblationConfig {
            trig_position: true,
            encoders: vec![1, 2],
            time_features: vec![TimeFeatures::NoSession, TimeFeatures::NoTime],
            sizes: Some(SplitSizes {
                train: 300,
                val: 100,
                test: 200,
            }),
            epochs: Some(1),
        },
        ..ExperimentConfig::default()
    };
    write_corpus_dir(&GeneratorConfig::travel_default(cfg.seed), sizes, cfg.data_dir()).unwrap();
    let corpus = Corpus::load(cfg.data_dir()).unwrap();
    (cfg, corpus)
}

#[test]
fn ablation_variants_share_data_and_audit_their_inputs() {
    let (cfg, corpus) = tiny_experiment("ablate");
    let a = ablation_suite(&cfg, &corpus, false).unwrap();
    let labels: Vec<&str> = a.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["trace", "trace-trig", "trace-h2", "trace-no-session", "trace-no-time"]);
    assert_ne!(a.data_hash, corpus.data_hash);
    for r in &a.rows {
        assert_eq!(r.data_hash, a.data_hash);
        let no_time = r.spec.time_features() == TimeFeatures::NoTime;
        assert_eq!(r.audit.uses_timestamps(), !no_time, "{}", r.label);
        assert_eq!(r.timestamp_invariant, no_time, "{}", r.label);
        assert_eq!(r.metrics.tasks.len(), 3);
        assert_eq!(r.train_report.as_ref().unwrap().epochs.len(), 1);
    }
    std::fs::remove_dir_all(&cfg.out_dir).ok();
}

#[test]
fn comparison_trains_once_and_reuses_checkpoints() {
    let (cfg, corpus) = tiny_experiment("compare");
    let runner = Runner::new(&cfg, &corpus);
    let c = run_comparison(&runner).unwrap();
    assert_eq!(c.data_hash, corpus.data_hash);
    assert_eq!(c.reports.keys().copied().collect::<Vec<_>>(), [Variant::Trace, Variant::Lstm, Variant::Myopic]);
    let u = &c.uplifts[&Variant::Myopic];
    assert!(u.mean.iter().all(|x| x.is_some_and(|v| v.abs() < 1e-12)));
    assert!(runner.cached(&ModelSpec::trace()).unwrap().is_some());
    // a second run loads the same checkpoints and reproduces the metrics
    let again = run_comparison(&Runner::new(&cfg, &corpus)).unwrap();
    assert_eq!(
        serde_json::to_string(&again.reports).unwrap(),
        serde_json::to_string(&c.reports).unwrap()
    );
    std::fs::remove_dir_all(&cfg.out_dir).ok();
}
