//! Class-weighted multi-task objective and the training loops.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clickstream::{Task, TaskLabelSet};
use crate::dataset::LabeledExample;
use crate::encoding::{EncodedJourney, JourneyEncoder};
use crate::error::{Result, TraceError};
use crate::models::{
    GptConfig, JourneyEmbedder, LstmConfig, LstmModel, MiniGpt, ModelKind, MultiTaskNet, Network,
    PackedBatch, TraceConfig, TraceModel,
};
use crate::tensor::{bce_term, hex, AdamConfig, Checkpoint, ParamStore, Tape, Var};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "train_report.json";
const EVAL_CHUNK: usize = 256;
const INITIAL_TRAIN_SAMPLE: usize = 2048;

/// Encoded journeys of one split with their labels.
#[derive(Clone, Debug, Default)]
pub struct EncodedSplit {
    pub user_ids: Vec<String>,
    pub journeys: Vec<EncodedJourney>,
    pub labels: Vec<TaskLabelSet>,
    /// Page name of the first event after the split, when known.
    pub next_pages: Vec<Option<String>>,
}

impl EncodedSplit {
    pub fn encode(examples: &[LabeledExample], enc: &JourneyEncoder) -> Result<Self> {
        let mut out = EncodedSplit::default();
        for ex in examples {
            out.user_ids.push(ex.user_id.clone());
            out.journeys.push(enc.encode(&ex.example.input)?);
            out.labels.push(ex.labels);
            out.next_pages.push(ex.example.next_page().map(str::to_string));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.journeys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.journeys.is_empty()
    }

    pub fn refs(&self) -> Vec<&EncodedJourney> {
        self.journeys.iter().collect()
    }

    pub fn subset(&self, idx: &[usize]) -> EncodedSplit {
        EncodedSplit {
            user_ids: idx.iter().map(|&i| self.user_ids[i].clone()).collect(),
            journeys: idx.iter().map(|&i| self.journeys[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            next_pages: idx.iter().map(|&i| self.next_pages[i].clone()).collect(),
        }
    }
}

/// Positive-class weights `w_k = 1 / p_k` for the supervised tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub tasks: Vec<Task>,
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn compute(labels: &[TaskLabelSet], tasks: &[Task]) -> Result<Self> {
        let n = labels.len();
        let mut weights = Vec::with_capacity(tasks.len());
        for &t in tasks {
            let pos = labels.iter().filter(|l| l.get(t)).count();
            if pos == 0 || pos == n {
                return Err(TraceError::config(format!(
                    "task {t} has {} in all {n} training labels; class weight undefined",
                    if pos == 0 { "no positives" } else { "positives" }
                )));
            }
            weights.push(1.0 / (pos as f64 / n as f64));
        }
        Ok(ClassWeights {
            tasks: tasks.to_vec(),
            weights,
        })
    }

    pub fn get(&self, t: Task) -> Option<f64> {
        self.tasks.iter().position(|&x| x == t).map(|i| self.weights[i])
    }
}

/// Sum over tasks of the weighted binary cross-entropy of one journey.
pub fn multitask_loss(logits: &[f64], labels: &[bool], weights: &ClassWeights) -> Result<f64> {
    let k = weights.tasks.len();
    if logits.len() != k || labels.len() != k {
        return Err(TraceError::shape(format!("expected {k} logits and labels")));
    }
    Ok((0..k)
        .map(|i| bce_term(logits[i], f64::from(labels[i] as u8), weights.weights[i]))
        .sum())
}

fn label_matrix(labels: &[&TaskLabelSet], tasks: &[Task]) -> Vec<f64> {
    labels
        .iter()
        .flat_map(|l| tasks.iter().map(move |&t| f64::from(l.get(t) as u8)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub patience: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            patience: 3,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(TraceError::config("epochs, batch_size and patience must be positive"));
        }
        if !(self.lr > 0.0 && self.clip_norm > 0.0) {
            return Err(TraceError::config("lr and clip_norm must be positive"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_task_loss: BTreeMap<String, f64>,
    pub val_task_loss: BTreeMap<String, f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model_kind: ModelKind,
    pub seed: u64,
    pub config_hash: String,
    pub param_count: usize,
    pub param_checksum: String,
    /// Inference loss on (a prefix of) the training split before any update.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub fn config_hash(value: &serde_json::Value) -> String {
    hex(&Sha256::digest(value.to_string().as_bytes()))
}

/// `(mean loss, per-task mean losses)` of one batch; the loss node is on `tape`.
struct BatchLoss {
    loss: Var,
    task_sums: Vec<f64>,
}

fn loss_value(tape: &Tape, l: &BatchLoss) -> f64 {
    tape.value(l.loss).item()
}

struct Objective<'a, M> {
    task_names: Vec<String>,
    #[allow(clippy::type_complexity)]
    batch: Box<
        dyn Fn(&M, &mut Tape, &[&EncodedJourney], &[&TaskLabelSet], bool, &mut ChaCha8Rng) -> Result<BatchLoss>
            + 'a,
    >,
}

fn multitask_objective<'a, M: MultiTaskNet>(weights: &'a ClassWeights) -> Objective<'a, M> {
    Objective {
        task_names: weights.tasks.iter().map(|t| t.name().to_string()).collect(),
        batch: Box::new(move |m: &M, tape, js, ls, training, rng| {
            let packed = PackedBatch::pack(js)?;
            let (_, z) = m.forward(tape, &packed, training, rng)?;
            let y = label_matrix(ls, &weights.tasks);
            let loss = tape.weighted_bce(z, &y, &weights.weights)?;
            let k = weights.tasks.len();
            let zv = tape.value(z).data();
            let mut task_sums = vec![0.0; k];
            for (i, (zz, yy)) in zv.iter().zip(&y).enumerate() {
                task_sums[i % k] += bce_term(*zz, *yy, weights.weights[i % k]);
            }
            Ok(BatchLoss { loss, task_sums })
        }),
    }
}

fn lm_objective<'a>() -> Objective<'a, MiniGpt> {
    Objective {
        task_names: vec![],
        batch: Box::new(|m: &MiniGpt, tape, js, _, training, rng| {
            let packed = PackedBatch::pack(js)?;
            let loss = m.lm_loss(tape, &packed, training, rng)?;
            Ok(BatchLoss { loss, task_sums: vec![] })
        }),
    }
}

fn evaluate<M>(model: &M, obj: &Objective<'_, M>, split: &EncodedSplit, limit: usize) -> Result<(f64, Vec<f64>)> {
    let n = split.len().min(limit);
    if n == 0 {
        return Err(TraceError::data("cannot evaluate on an empty split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut total = 0.0;
    let mut tasks = vec![0.0; obj.task_names.len()];
    let js = split.refs();
    let ls: Vec<&TaskLabelSet> = split.labels.iter().collect();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let mut tape = Tape::new();
        let b = (obj.batch)(model, &mut tape, &js[start..end], &ls[start..end], false, &mut rng)?;
        total += loss_value(&tape, &b) * (end - start) as f64;
        for (t, s) in tasks.iter_mut().zip(&b.task_sums) {
            *t += s;
        }
    }
    Ok((total / n as f64, tasks.into_iter().map(|s| s / n as f64).collect()))
}

fn named(names: &[String], values: &[f64]) -> BTreeMap<String, f64> {
    names.iter().cloned().zip(values.iter().copied()).collect()
}

/// Where and with what auxiliary state a trained model is persisted.
#[derive(Clone, Debug)]
pub struct SaveTo {
    pub dir: PathBuf,
    pub extra: serde_json::Value,
}

fn fit<M: Network>(
    model: &mut M,
    obj: &Objective<'_, M>,
    train: &EncodedSplit,
    val: &EncodedSplit,
    cfg: &TrainConfig,
    save: Option<&SaveTo>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TraceError::data("training and validation splits must be non-empty"));
    }
    let started = Instant::now();
    let adam = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (initial_train_loss, _) = evaluate(model, obj, train, INITIAL_TRAIN_SAMPLE)?;
    let (initial_val_loss, _) = evaluate(model, obj, val, usize::MAX)?;

    let js = train.refs();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut task_sums = vec![0.0; obj.task_names.len()];
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let bj: Vec<&EncodedJourney> = chunk.iter().map(|&i| js[i]).collect();
            let bl: Vec<&TaskLabelSet> = chunk.iter().map(|&i| &train.labels[i]).collect();
            let mut tape = Tape::new();
            let b = (obj.batch)(model, &mut tape, &bj, &bl, true, &mut rng)?;
            let lv = loss_value(&tape, &b);
            if !lv.is_finite() {
                let users: Vec<&str> = chunk.iter().take(5).map(|&i| train.user_ids[i].as_str()).collect();
                return Err(TraceError::NonFinite {
                    param: "loss".into(),
                    detail: format!("epoch {epoch} batch {bi}: loss {lv}; first users {users:?}"),
                });
            }
            sum += lv * chunk.len() as f64;
            for (t, s) in task_sums.iter_mut().zip(&b.task_sums) {
                *t += s;
            }
            tape.backward(b.loss)?;
            let mut grads = tape.param_grads();
            grads.clip_global_norm(cfg.clip_norm);
            model.store_mut().adam_step(&grads, &adam)?;
        }
        let n = train.len() as f64;
        let (val_loss, val_tasks) = evaluate(model, obj, val, usize::MAX)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: sum / n,
            val_loss,
            train_task_loss: named(&obj.task_names, &task_sums.iter().map(|s| s / n).collect::<Vec<_>>()),
            val_task_loss: named(&obj.task_names, &val_tasks),
            seconds: t0.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, model.store().clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_loss, best_store) = best.expect("at least one epoch ran");
    model.store_mut().copy_values_from(&best_store)?;

    let config = model.config_json();
    let mut report = TrainReport {
        model_kind: model.kind(),
        seed: cfg.seed,
        config_hash: config_hash(&serde_json::json!({ "model": config, "train": cfg })),
        param_count: model.store().num_scalars(),
        param_checksum: model.store().checksum(),
        initial_train_loss,
        initial_val_loss,
        epochs,
        best_epoch,
        best_val_loss,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        checkpoint: None,
    };
    if let Some(save) = save {
        std::fs::create_dir_all(&save.dir)?;
        let path = save.dir.join(CHECKPOINT_FILE);
        Checkpoint {
            model_kind: model.kind().name().to_string(),
            config,
            seed: cfg.seed,
            extra: save.extra.clone(),
            store: model.store().clone(),
        }
        .save(&path)?;
        report.checkpoint = Some(path);
        report.save(save.dir.join(REPORT_FILE))?;
    }
    Ok(report)
}

/// Class-weighted multi-label training for TRACE, its single-task variant or the LSTM.
pub fn train_multitask<M: MultiTaskNet>(
    model: &mut M,
    train: &EncodedSplit,
    val: &EncodedSplit,
    weights: &ClassWeights,
    cfg: &TrainConfig,
    save: Option<&SaveTo>,
) -> Result<TrainReport> {
    if weights.tasks.len() != model.n_tasks() {
        return Err(TraceError::config(format!(
            "model has {} heads but {} class weights were given",
            model.n_tasks(),
            weights.tasks.len()
        )));
    }
    fit(model, &multitask_objective(weights), train, val, cfg, save)
}

/// Next-page cross-entropy training for the Mini-GPT.
pub fn train_minigpt(
    model: &mut MiniGpt,
    train: &EncodedSplit,
    val: &EncodedSplit,
    cfg: &TrainConfig,
    save: Option<&SaveTo>,
) -> Result<TrainReport> {
    fit(model, &lm_objective(), train, val, cfg, save)
}

/// The training objective of one batch, recorded on `tape`.
pub fn multitask_batch_loss<M: MultiTaskNet>(
    model: &M,
    tape: &mut Tape,
    batch: &[&EncodedJourney],
    labels: &[&TaskLabelSet],
    weights: &ClassWeights,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    Ok((multitask_objective(weights).batch)(model, tape, batch, labels, training, rng)?.loss)
}

/// Validation loss of a multi-task model, computed exactly as during training.
pub fn multitask_val_loss<M: MultiTaskNet>(model: &M, val: &EncodedSplit, weights: &ClassWeights) -> Result<f64> {
    Ok(evaluate(model, &multitask_objective(weights), val, usize::MAX)?.0)
}

pub fn minigpt_val_loss(model: &MiniGpt, val: &EncodedSplit) -> Result<f64> {
    Ok(evaluate(model, &lm_objective(), val, usize::MAX)?.0)
}

/// Any trained model, rebuilt from its checkpoint.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Trace(TraceModel),
    Lstm(LstmModel),
    MiniGpt(MiniGpt),
}

impl AnyModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: ModelKind = ck.model_kind.parse()?;
        Ok(match kind {
            ModelKind::Trace | ModelKind::SingleTask => {
                let cfg: TraceConfig = serde_json::from_value(ck.config.clone())?;
                AnyModel::Trace(TraceModel::from_store(cfg, &ck.store)?)
            }
            ModelKind::Lstm => {
                let cfg: LstmConfig = serde_json::from_value(ck.config.clone())?;
                AnyModel::Lstm(LstmModel::from_store(cfg, &ck.store)?)
            }
            ModelKind::MiniGpt => {
                let cfg: GptConfig = serde_json::from_value(ck.config.clone())?;
                AnyModel::MiniGpt(MiniGpt::from_store(cfg, &ck.store)?)
            }
        })
    }

    pub fn embedder(&self) -> &dyn JourneyEmbedder {
        match self {
            AnyModel::Trace(m) => m,
            AnyModel::Lstm(m) => m,
            AnyModel::MiniGpt(m) => m,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Trace(m) => m.kind(),
            AnyModel::Lstm(m) => m.kind(),
            AnyModel::MiniGpt(m) => m.kind(),
        }
    }
}

/// Loads a checkpoint, naming `train` as the missing prerequisite when absent.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(TraceError::Missing {
            artifact: "model checkpoint".into(),
            path: path.to_path_buf(),
            hint: "train".into(),
        });
    }
    Checkpoint::load(path)
}
