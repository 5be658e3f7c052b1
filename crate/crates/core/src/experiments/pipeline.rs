//! Training, caching and probing of every model variant on one corpus.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{write_json, ExperimentConfig, Variant};
use crate::clickstream::{sessionize, Task};
use crate::dataset::LabeledExample;
use crate::encoding::{EncodedJourney, JourneyEncoder, TimeFeatures};
use crate::error::{Result, TraceError};
use crate::models::{
    Aggregated, GptConfig, InputAudit, InputConfig, JourneyEmbedder, LstmConfig, LstmModel, MiniGpt,
    PackedBatch, TraceConfig, TraceModel,
};
use crate::probe::gbdt::FeatureMatrix;
use crate::probe::{compute_uplift, evaluate_features, myopic_features, MetricsReport, UpliftReport};
use crate::synth::{load_corpus_dir, CorpusManifest, GeneratorConfig, SplitSizes};
use crate::tensor::{hex, Checkpoint, Tape};
use crate::training::{
    load_checkpoint, train_minigpt, train_multitask, AnyModel, ClassWeights, EncodedSplit,
    TrainConfig, TrainReport, SaveTo, CHECKPOINT_FILE, REPORT_FILE,
};

/// Labeled train/val/test splits loaded from a corpus directory.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub generator: GeneratorConfig,
    pub train: Vec<LabeledExample>,
    pub val: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    /// Digest identifying exactly these splits.
    pub data_hash: String,
}

impl Corpus {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let (manifest, generator, [train, val, test]) = load_corpus_dir(dir)?;
        let data_hash = manifest.data_hash();
        Ok(Corpus {
            manifest,
            generator,
            train,
            val,
            test,
            data_hash,
        })
    }

    /// The first `sizes` journeys of each split.
    pub fn prefix(&self, sizes: SplitSizes) -> Corpus {
        let cut = |v: &[LabeledExample], n: usize| v[..n.min(v.len())].to_vec();
        let data_hash = hex(&Sha256::digest(
            format!("{}:{}:{}:{}", self.data_hash, sizes.train, sizes.val, sizes.test).as_bytes(),
        ));
        Corpus {
            manifest: self.manifest.clone(),
            generator: self.generator.clone(),
            train: cut(&self.train, sizes.train),
            val: cut(&self.val, sizes.val),
            test: cut(&self.test, sizes.test),
            data_hash,
        }
    }

    pub fn fit_encoder(&self, max_len: usize, time: TimeFeatures) -> Result<JourneyEncoder> {
        JourneyEncoder::fit(self.train.iter().map(|e| &e.example.input), max_len, time)
    }

    pub fn test_labels(&self) -> Vec<crate::clickstream::TaskLabelSet> {
        self.test.iter().map(|e| e.labels).collect()
    }
}

/// One trainable architecture/input combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Trace {
        n_encoders: usize,
        trig_position: bool,
        time_features: TimeFeatures,
    },
    SingleTask {
        task: Task,
    },
    Lstm,
    MiniGpt,
}

impl ModelSpec {
    pub fn trace() -> Self {
        ModelSpec::Trace {
            n_encoders: 1,
            trig_position: false,
            time_features: TimeFeatures::All,
        }
    }

    /// Directory-safe name.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Trace {
                n_encoders,
                trig_position,
                time_features,
            } => {
                let mut s = String::from("trace");
                if *n_encoders != 1 {
                    s += &format!("-h{n_encoders}");
                }
                if *trig_position {
                    s += "-trig";
                }
                match time_features {
                    TimeFeatures::All => {}
                    TimeFeatures::NoSession => s += "-no-session",
                    TimeFeatures::NoTime => s += "-no-time",
                }
                s
            }
            ModelSpec::SingleTask { task } => format!("st-{}", task.name().to_lowercase()),
            ModelSpec::Lstm => "lstm".into(),
            ModelSpec::MiniGpt => "mini-gpt".into(),
        }
    }

    pub fn time_features(&self) -> TimeFeatures {
        match self {
            ModelSpec::Trace { time_features, .. } => *time_features,
            _ => TimeFeatures::All,
        }
    }

    fn tasks(&self) -> Vec<Task> {
        match self {
            ModelSpec::SingleTask { task } => vec![*task],
            _ => Task::TRAINING.to_vec(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointExtra {
    spec: ModelSpec,
    encoder: JourneyEncoder,
    class_weights: Option<ClassWeights>,
    data_hash: String,
    fingerprint: String,
}

/// A model with the encoder it was trained with.
#[derive(Clone, Debug)]
pub struct Trained {
    pub spec: ModelSpec,
    pub model: AnyModel,
    pub encoder: JourneyEncoder,
    pub report: Option<TrainReport>,
    pub checkpoint: PathBuf,
}

impl Trained {
    pub fn embed_split(&self, examples: &[LabeledExample]) -> Result<Vec<Vec<f64>>> {
        let enc: Vec<EncodedJourney> = examples
            .iter()
            .map(|e| self.encoder.encode(&e.example.input))
            .collect::<Result<_>>()?;
        self.model.embedder().embed(&enc.iter().collect::<Vec<_>>())
    }

    pub fn trace(&self) -> Option<&TraceModel> {
        match &self.model {
            AnyModel::Trace(m) => Some(m),
            _ => None,
        }
    }
}

/// Trains, caches and probes models for one experiment configuration and corpus.
pub struct Runner<'a> {
    pub cfg: &'a ExperimentConfig,
    pub corpus: &'a Corpus,
    pub models_dir: PathBuf,
    pub train_cfg: TrainConfig,
    pub verbose: bool,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, corpus: &'a Corpus) -> Self {
        Runner {
            cfg,
            corpus,
            models_dir: cfg.models_dir(),
            train_cfg: TrainConfig {
                seed: cfg.seed,
                ..cfg.train.clone()
            },
            verbose: false,
        }
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn model_dir(&self, spec: &ModelSpec) -> PathBuf {
        self.models_dir.join(spec.label())
    }

    fn fingerprint(&self, spec: &ModelSpec) -> String {
        let v = serde_json::json!({
            "spec": spec,
            "train": self.train_cfg,
            "max_len": self.cfg.max_len,
            "data": self.corpus.data_hash,
        });
        hex(&Sha256::digest(v.to_string().as_bytes()))
    }

    /// Loads the cached model for `spec` if it was trained with identical inputs.
    pub fn cached(&self, spec: &ModelSpec) -> Result<Option<Trained>> {
        let path = self.model_dir(spec).join(CHECKPOINT_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let ck = load_checkpoint(&path)?;
        let extra = checkpoint_extra(&ck, &path)?;
        if extra.fingerprint != self.fingerprint(spec) {
            return Ok(None);
        }
        trained_from(ck, extra, &path).map(Some)
    }

    /// Trains `spec` unless an identical cached model exists.
    pub fn train(&self, spec: &ModelSpec) -> Result<Trained> {
        if let Some(t) = self.cached(spec)? {
            self.log(format!("[{}] using cached checkpoint", spec.label()));
            return Ok(t);
        }
        self.log(format!("[{}] training", spec.label()));
        let encoder = self.corpus.fit_encoder(self.cfg.max_len, spec.time_features())?;
        let train = EncodedSplit::encode(&self.corpus.train, &encoder)?;
        let val = EncodedSplit::encode(&self.corpus.val, &encoder)?;
        let input = InputConfig::from_encoder(&encoder);
        let seed = self.train_cfg.seed;
        let weights = match spec {
            ModelSpec::MiniGpt => None,
            _ => Some(ClassWeights::compute(&train.labels, &spec.tasks())?),
        };
        let save = SaveTo {
            dir: self.model_dir(spec),
            extra: serde_json::to_value(CheckpointExtra {
                spec: spec.clone(),
                encoder: encoder.clone(),
                class_weights: weights.clone(),
                data_hash: self.corpus.data_hash.clone(),
                fingerprint: self.fingerprint(spec),
            })?,
        };
        let (model, report) = match spec {
            ModelSpec::Trace {
                n_encoders,
                trig_position,
                ..
            } => {
                let mut cfg = TraceConfig::new(input);
                cfg.n_encoders = *n_encoders;
                cfg.input.trig_position = *trig_position;
                let mut m = TraceModel::new(cfg, seed)?;
                let r = train_multitask(&mut m, &train, &val, weights.as_ref().unwrap(), &self.train_cfg, Some(&save))?;
                (AnyModel::Trace(m), r)
            }
            ModelSpec::SingleTask { task } => {
                let mut m = TraceModel::new(TraceConfig::single_task(input, *task), seed)?;
                let r = train_multitask(&mut m, &train, &val, weights.as_ref().unwrap(), &self.train_cfg, Some(&save))?;
                (AnyModel::Trace(m), r)
            }
            ModelSpec::Lstm => {
                let mut m = LstmModel::new(LstmConfig::new(input), seed)?;
                let r = train_multitask(&mut m, &train, &val, weights.as_ref().unwrap(), &self.train_cfg, Some(&save))?;
                (AnyModel::Lstm(m), r)
            }
            ModelSpec::MiniGpt => {
                let cfg = GptConfig::new(encoder.vocabs.pages().size(), encoder.max_len);
                let mut m = MiniGpt::new(cfg, seed)?;
                let r = train_minigpt(&mut m, &train, &val, &self.train_cfg, Some(&save))?;
                (AnyModel::MiniGpt(m), r)
            }
        };
        self.log(format!(
            "[{}] {} epochs, best val {:.4} at epoch {} ({:.0}s)",
            spec.label(),
            report.epochs.len(),
            report.best_val_loss,
            report.best_epoch,
            report.wall_clock_secs
        ));
        Ok(Trained {
            spec: spec.clone(),
            model,
            encoder,
            checkpoint: report.checkpoint.clone().expect("saved"),
            report: Some(report),
        })
    }

    /// Loads the trained model for `spec`; the error names `train` when absent.
    pub fn load(&self, spec: &ModelSpec) -> Result<Trained> {
        load_trained(self.model_dir(spec).join(CHECKPOINT_FILE))
    }

    pub fn specs_for(&self, variant: Variant) -> Vec<ModelSpec> {
        match variant {
            Variant::Trace => vec![ModelSpec::trace()],
            Variant::StCohort | Variant::StAggregated => self
                .cfg
                .tasks
                .iter()
                .map(|&task| ModelSpec::SingleTask { task })
                .collect(),
            Variant::Lstm => vec![ModelSpec::Lstm],
            Variant::MiniGpt => vec![ModelSpec::MiniGpt],
            Variant::Myopic => vec![],
        }
    }

    /// Trains every model `variant` depends on.
    pub fn train_variant(&self, variant: Variant) -> Result<Vec<Trained>> {
        self.specs_for(variant).iter().map(|s| self.train(s)).collect()
    }

    /// Probes the test split with embeddings from `variant`; `train` decides
    /// whether missing models are trained or reported as missing.
    pub fn probe(&self, variant: Variant, train: bool) -> Result<MetricsReport> {
        let labels = self.corpus.test_labels();
        let tasks = &self.cfg.tasks;
        let grid = &self.cfg.probe;
        let seed = self.cfg.seed;
        let get = |s: &ModelSpec| if train { self.train(s) } else { self.load(s) };
        self.log(format!("[{variant}] probing {} tasks", tasks.len()));
        match variant {
            Variant::Myopic => {
                let enc = self.corpus.fit_encoder(self.cfg.max_len, TimeFeatures::All)?;
                let js: Vec<EncodedJourney> = self
                    .corpus
                    .test
                    .iter()
                    .map(|e| enc.encode(&e.example.input))
                    .collect::<Result<_>>()?;
                let x = myopic_features(&js.iter().collect::<Vec<_>>(), &enc.vocabs.sizes())?;
                evaluate_features(variant.name(), &x, &labels, tasks, grid, seed)
            }
            Variant::StCohort => {
                let mut merged = Vec::new();
                for &task in tasks {
                    let t = get(&ModelSpec::SingleTask { task })?;
                    let x = FeatureMatrix::from_rows(&t.embed_split(&self.corpus.test)?)?;
                    merged.extend(evaluate_features(variant.name(), &x, &labels, &[task], grid, seed)?.tasks);
                }
                Ok(MetricsReport {
                    source: variant.name().into(),
                    rows: labels.len(),
                    tasks: merged,
                })
            }
            Variant::StAggregated => {
                let members: Vec<Trained> = self.specs_for(variant).iter().map(get).collect::<Result<_>>()?;
                let models: Vec<&TraceModel> = members.iter().filter_map(Trained::trace).collect();
                let agg = Aggregated { members: models };
                // every single-task model shares the same encoder
                let enc = &members[0].encoder;
                let js: Vec<EncodedJourney> = self
                    .corpus
                    .test
                    .iter()
                    .map(|e| enc.encode(&e.example.input))
                    .collect::<Result<_>>()?;
                let x = FeatureMatrix::from_rows(&agg.embed(&js.iter().collect::<Vec<_>>())?)?;
                evaluate_features(variant.name(), &x, &labels, tasks, grid, seed)
            }
            _ => {
                let spec = self.specs_for(variant).remove(0);
                let t = get(&spec)?;
                let x = FeatureMatrix::from_rows(&t.embed_split(&self.corpus.test)?)?;
                evaluate_features(variant.name(), &x, &labels, tasks, grid, seed)
            }
        }
    }
}

/// Rebuilds a trained model and its encoder from a checkpoint file.
pub fn load_trained(path: impl AsRef<Path>) -> Result<Trained> {
    let path = path.as_ref();
    let ck = load_checkpoint(path)?;
    let extra = checkpoint_extra(&ck, path)?;
    trained_from(ck, extra, path)
}

fn checkpoint_extra(ck: &Checkpoint, path: &Path) -> Result<CheckpointExtra> {
    serde_json::from_value(ck.extra.clone())
        .map_err(|e| TraceError::Checkpoint(format!("{}: missing encoder state: {e}", path.display())))
}

fn trained_from(ck: Checkpoint, extra: CheckpointExtra, path: &Path) -> Result<Trained> {
    let report = path
        .parent()
        .map(|d| d.join(REPORT_FILE))
        .and_then(|p| std::fs::read(p).ok())
        .and_then(|b| serde_json::from_slice(&b).ok());
    Ok(Trained {
        spec: extra.spec,
        model: AnyModel::from_checkpoint(&ck)?,
        encoder: extra.encoder,
        report,
        checkpoint: path.to_path_buf(),
    })
}

/// Probe reports for every configured variant plus uplifts against the myopic baseline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub data_hash: String,
    pub primary: Variant,
    pub reports: BTreeMap<Variant, MetricsReport>,
    pub uplifts: BTreeMap<Variant, UpliftReport>,
}

impl Comparison {
    pub fn baseline(&self) -> &MetricsReport {
        &self.reports[&Variant::Myopic]
    }
}

pub fn run_comparison(runner: &Runner<'_>) -> Result<Comparison> {
    let cfg = runner.cfg;
    let mut variants = cfg.variants.clone();
    if !variants.contains(&Variant::Myopic) {
        variants.push(Variant::Myopic);
    }
    variants.sort();
    let mut reports = BTreeMap::new();
    for &v in &variants {
        let r = runner.probe(v, true)?;
        write_json(&cfg.reports_dir().join(format!("{v}.metrics.json")), &r)?;
        reports.insert(v, r);
    }
    let base = &reports[&Variant::Myopic];
    let uplifts = reports
        .iter()
        .map(|(v, r)| Ok((*v, compute_uplift(r, base)?)))
        .collect::<Result<_>>()?;
    Ok(Comparison {
        data_hash: runner.corpus.data_hash.clone(),
        primary: cfg.primary,
        reports,
        uplifts,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub spec: ModelSpec,
    pub data_hash: String,
    pub audit: InputAudit,
    /// Encoder input unchanged when every timestamp is perturbed (order kept).
    pub timestamp_invariant: bool,
    pub metrics: MetricsReport,
    pub uplift: UpliftReport,
    pub train_report: Option<TrainReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationResult {
    pub data_hash: String,
    pub baseline: MetricsReport,
    pub rows: Vec<AblationRow>,
}

/// The base TRACE configuration plus each ablated variant.
pub fn ablation_specs(cfg: &super::AblationConfig) -> Vec<ModelSpec> {
    let base = ModelSpec::trace();
    let mut out = vec![base.clone()];
    if cfg.trig_position {
        out.push(ModelSpec::Trace {
            n_encoders: 1,
            trig_position: true,
            time_features: TimeFeatures::All,
        });
    }
    for &h in &cfg.encoders {
        if h != 1 {
            out.push(ModelSpec::Trace {
                n_encoders: h,
                trig_position: false,
                time_features: TimeFeatures::All,
            });
        }
    }
    for &t in &cfg.time_features {
        if t != TimeFeatures::All {
            out.push(ModelSpec::Trace {
                n_encoders: 1,
                trig_position: false,
                time_features: t,
            });
        }
    }
    out
}

/// Trains and probes each ablation variant on identical data and seeds.
pub fn ablation_suite(cfg: &ExperimentConfig, corpus: &Corpus, verbose: bool) -> Result<AblationResult> {
    let corpus = match cfg.ablation.sizes {
        Some(s) => corpus.prefix(s),
        None => corpus.clone(),
    };
    let mut runner = Runner::new(cfg, &corpus);
    runner.verbose = verbose;
    runner.models_dir = cfg.models_dir().join("ablation");
    if let Some(e) = cfg.ablation.epochs {
        runner.train_cfg.epochs = e;
    }
    let baseline = runner.probe(Variant::Myopic, false)?;
    let mut rows = Vec::new();
    for spec in ablation_specs(&cfg.ablation) {
        let t = runner.train(&spec)?;
        let x = FeatureMatrix::from_rows(&t.embed_split(&corpus.test)?)?;
        runner.log(format!("[{}] probing", spec.label()));
        let metrics = evaluate_features(&spec.label(), &x, &corpus.test_labels(), &cfg.tasks, &cfg.probe, cfg.seed)?;
        let uplift = compute_uplift(&metrics, &baseline)?;
        let model = t.trace().expect("ablation variants are transformers");
        rows.push(AblationRow {
            label: spec.label(),
            audit: model.input.audit(),
            timestamp_invariant: timestamp_invariance(model, &t.encoder, &corpus, 50, cfg.seed)?,
            spec,
            data_hash: corpus.data_hash.clone(),
            metrics,
            uplift,
            train_report: t.report,
        });
    }
    Ok(AblationResult {
        data_hash: corpus.data_hash.clone(),
        baseline,
        rows,
    })
}

/// Re-times every event of `n` test journeys (order preserved) and checks
/// whether the encoder's input matrix is bit-identical.
pub fn timestamp_invariance(
    model: &TraceModel,
    encoder: &JourneyEncoder,
    corpus: &Corpus,
    n: usize,
    seed: u64,
) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let timeout = corpus.manifest.session_timeout;
    for ex in corpus.test.iter().take(n) {
        let events = ex.example.input.flatten();
        let mut shifted = events.clone();
        let mut t = events[0].timestamp * 0.5;
        for (i, e) in shifted.iter_mut().enumerate() {
            if i > 0 {
                let gap = events[i].timestamp - events[i - 1].timestamp;
                t += gap * rng.gen_range(0.2..5.0) + rng.gen_range(1.0..30_000.0);
            }
            e.timestamp = t;
        }
        let a = encoder.encode(&ex.example.input)?;
        let b = encoder.encode(&sessionize(ex.user_id.clone(), shifted, timeout)?)?;
        let input = |e: &EncodedJourney| -> Result<Vec<f64>> {
            let mut tape = Tape::new();
            let v = model.input.forward(&mut tape, &model.store, &PackedBatch::pack(&[e])?)?;
            Ok(tape.value(v).data().to_vec())
        };
        if input(&a)? != input(&b)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Test-split indices stratified over the designated next pages, with their labels.
pub fn tsne_sample(corpus: &Corpus, cfg: &super::TsneConfig) -> Result<(Vec<usize>, Vec<String>)> {
    let next: Vec<Option<String>> = corpus
        .test
        .iter()
        .map(|e| e.example.next_page().map(str::to_string))
        .collect();
    let pages = if cfg.pages.is_empty() {
        corpus.generator.catalog.common_pages().into_iter().map(str::to_string).collect()
    } else {
        cfg.pages.clone()
    };
    let idx = super::tsne::stratified_sample(&next, &pages, cfg.per_page, cfg.seed)?;
    let labels = idx.iter().map(|&i| next[i].clone().expect("sampled rows have a next page")).collect();
    Ok((idx, labels))
}

/// The encoded test journey whose length is closest to the bench target.
pub fn bench_journey(encoder: &JourneyEncoder, corpus: &Corpus, cfg: &super::BenchConfig) -> Result<EncodedJourney> {
    let enc: Vec<EncodedJourney> = corpus
        .test
        .iter()
        .map(|e| encoder.encode(&e.example.input))
        .collect::<Result<_>>()?;
    let i = super::latency::pick_journey(&enc, cfg.journey_len)
        .ok_or_else(|| TraceError::data("empty test split"))?;
    Ok(enc.into_iter().nth(i).expect("index in range"))
}
