//! Journey encoders: TRACE, its single-task variant, a multi-task LSTM and a
//! next-page Mini-GPT. All of them map encoded journeys to fixed-width
//! embeddings through [`JourneyEmbedder`].

pub mod layers;
mod lstm;
mod minigpt;
mod trace;

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncodedJourney, JourneyEncoder, CAT_ATTRIBUTES};
use crate::error::{Result, TraceError};
use crate::tensor::{ParamId, ParamStore, SegmentLayout, Tape, Tensor, Var};
use layers::{embed_rows, sinusoidal};

pub use lstm::{LstmConfig, LstmModel};
pub use minigpt::{GptConfig, MiniGpt};
pub use trace::{TraceConfig, TraceModel};

/// Rows per forward pass when embedding many journeys.
pub const EMBED_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Trace,
    SingleTask,
    Lstm,
    MiniGpt,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Trace => "trace",
            ModelKind::SingleTask => "single-task",
            ModelKind::Lstm => "lstm",
            ModelKind::MiniGpt => "mini-gpt",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self> {
        [ModelKind::Trace, ModelKind::SingleTask, ModelKind::Lstm, ModelKind::MiniGpt]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TraceError::config(format!("unknown model kind `{s}`")))
    }
}

/// Journeys stacked row-wise with one segment per journey.
///
/// [`PackedBatch::pack`] keeps only real rows; [`PackedBatch::pack_padded`]
/// keeps every row of the fixed-length encoding and relies on the mask.
#[derive(Clone, Debug)]
pub struct PackedBatch {
    pub n_numeric: usize,
    /// One index column per categorical attribute.
    pub cat: Vec<Vec<Option<usize>>>,
    /// `[rows × n_numeric]`, row-major.
    pub numeric: Vec<f64>,
    pub event_pos: Vec<usize>,
    pub session_pos: Vec<usize>,
    pub layout: Rc<SegmentLayout>,
}

impl PackedBatch {
    pub fn pack(batch: &[&EncodedJourney]) -> Result<Self> {
        Self::build(batch, false)
    }

    pub fn pack_padded(batch: &[&EncodedJourney]) -> Result<Self> {
        Self::build(batch, true)
    }

    fn build(batch: &[&EncodedJourney], keep_padding: bool) -> Result<Self> {
        let first = batch
            .first()
            .ok_or_else(|| TraceError::shape("cannot pack an empty batch"))?;
        let n_numeric = first.n_numeric;
        let mut out = PackedBatch {
            n_numeric,
            cat: vec![Vec::new(); CAT_ATTRIBUTES.len()],
            numeric: Vec::new(),
            event_pos: Vec::new(),
            session_pos: Vec::new(),
            layout: Rc::new(SegmentLayout::from_lengths(&[])?),
        };
        let mut segments = Vec::with_capacity(batch.len());
        let mut mask = Vec::new();
        for enc in batch {
            if enc.n_numeric != n_numeric {
                return Err(TraceError::shape("journeys in a batch disagree on feature width"));
            }
            if enc.true_length == 0 {
                return Err(TraceError::data("cannot pack a journey without events"));
            }
            let rows = if keep_padding { enc.max_len } else { enc.true_length };
            segments.push((mask.len(), rows));
            for r in 0..rows {
                for (k, col) in out.cat.iter_mut().enumerate() {
                    col.push(Some(enc.cat_row(r)[k]));
                }
                out.numeric.extend_from_slice(enc.num_row(r));
                out.event_pos.push(enc.event_pos[r]);
                out.session_pos.push(enc.session_pos[r]);
                mask.push(enc.mask[r]);
            }
        }
        out.layout = Rc::new(SegmentLayout::with_mask(segments, mask)?);
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.layout.rows()
    }

    pub fn len(&self) -> usize {
        self.layout.segments().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real rows of each segment, oldest first.
    pub fn real_rows(&self) -> Vec<Vec<usize>> {
        let mask = self.layout.mask();
        self.layout
            .segments()
            .iter()
            .map(|&(s, l)| (s..s + l).filter(|&r| mask[r]).collect())
            .collect()
    }
}

/// Shape of the per-event input vector and the position tables added to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub cat_vocab_sizes: Vec<usize>,
    pub cat_dim: usize,
    pub n_numeric: usize,
    pub max_len: usize,
    pub max_sessions: usize,
    /// Learnable session-position table; off for the no-session ablations.
    pub session_position: bool,
    /// Adds fixed sine/cosine encodings of event position.
    pub trig_position: bool,
}

impl InputConfig {
    pub fn from_encoder(enc: &JourneyEncoder) -> Self {
        InputConfig {
            cat_vocab_sizes: enc.vocabs.sizes(),
            cat_dim: 32,
            n_numeric: enc.n_numeric(),
            max_len: enc.max_len,
            max_sessions: enc.max_len,
            session_position: enc.time_features.uses_session(),
            trig_position: false,
        }
    }

    /// Width `D` of the per-event feature vector.
    pub fn width(&self) -> usize {
        self.cat_dim * self.cat_vocab_sizes.len() + self.n_numeric
    }
}

/// Which signals reach the encoder input; used to audit ablation variants.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputAudit {
    pub width: usize,
    pub categorical: Vec<String>,
    pub numeric: usize,
    pub event_position: bool,
    pub session_position: bool,
    pub trig_position: bool,
}

impl InputAudit {
    pub fn uses_timestamps(&self) -> bool {
        self.numeric > 0 || self.session_position
    }
}

/// Categorical embeddings ⧺ numeric features, plus position embeddings.
#[derive(Clone, Debug)]
pub struct InputEmbedding {
    pub cfg: InputConfig,
    pub cat: Vec<ParamId>,
    pub event_pos: ParamId,
    pub session_pos: Option<ParamId>,
}

const EMBED_INIT_STD: f64 = 0.1;

impl InputEmbedding {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &InputConfig, rng: &mut R) -> Result<Self> {
        if cfg.cat_dim == 0 || cfg.max_len == 0 || cfg.max_sessions == 0 {
            return Err(TraceError::config("embedding dims and table sizes must be positive"));
        }
        let d = cfg.width();
        let cat = cfg
            .cat_vocab_sizes
            .iter()
            .zip(CAT_ATTRIBUTES)
            .map(|(&v, name)| {
                store.add_embedding(
                    format!("embed.{name}"),
                    Tensor::randn(&[v, cfg.cat_dim], EMBED_INIT_STD, rng),
                    0,
                )
            })
            .collect::<Result<_>>()?;
        let event_pos = store.add_embedding(
            "embed.event_pos",
            Tensor::randn(&[cfg.max_len + 1, d], EMBED_INIT_STD, rng),
            0,
        )?;
        let session_pos = if cfg.session_position {
            Some(store.add_embedding(
                "embed.session_pos",
                Tensor::randn(&[cfg.max_sessions + 1, d], EMBED_INIT_STD, rng),
                0,
            )?)
        } else {
            None
        };
        Ok(InputEmbedding {
            cfg: cfg.clone(),
            cat,
            event_pos,
            session_pos,
        })
    }

    pub fn audit(&self) -> InputAudit {
        InputAudit {
            width: self.cfg.width(),
            categorical: CAT_ATTRIBUTES[..self.cat.len()].iter().map(|s| s.to_string()).collect(),
            numeric: self.cfg.n_numeric,
            event_position: true,
            session_position: self.session_pos.is_some(),
            trig_position: self.cfg.trig_position,
        }
    }

    /// `[rows × D]` input matrix for a packed batch.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &PackedBatch) -> Result<Var> {
        let cfg = &self.cfg;
        if batch.n_numeric != cfg.n_numeric || batch.cat.len() != self.cat.len() {
            return Err(TraceError::shape(format!(
                "batch carries {} categorical / {} numeric columns, model expects {} / {}",
                batch.cat.len(),
                batch.n_numeric,
                self.cat.len(),
                cfg.n_numeric
            )));
        }
        let rows = batch.rows();
        let mut parts = Vec::with_capacity(self.cat.len() + 1);
        for (&table, idx) in self.cat.iter().zip(&batch.cat) {
            parts.push(embed_rows(tape, store, table, idx)?);
        }
        if cfg.n_numeric > 0 {
            let num = Tensor::matrix(rows, cfg.n_numeric, batch.numeric.clone())?;
            parts.push(tape.constant(num));
        }
        let mut x = tape.concat_cols(&parts)?;

        if let Some(&bad) = batch.event_pos.iter().find(|&&p| p > cfg.max_len) {
            return Err(TraceError::shape(format!(
                "event position {bad} exceeds max_len {}",
                cfg.max_len
            )));
        }
        let ev: Vec<Option<usize>> = batch.event_pos.iter().map(|&p| Some(p)).collect();
        let pe = embed_rows(tape, store, self.event_pos, &ev)?;
        x = tape.add(x, pe)?;
        if let Some(table) = self.session_pos {
            let sp: Vec<Option<usize>> = batch
                .session_pos
                .iter()
                .map(|&n| Some(n.min(cfg.max_sessions)))
                .collect();
            let se = embed_rows(tape, store, table, &sp)?;
            x = tape.add(x, se)?;
        }
        if cfg.trig_position {
            let trig = tape.constant(sinusoidal(&batch.event_pos, cfg.width()));
            x = tape.add(x, trig)?;
        }
        Ok(x)
    }
}

/// Shared backbone tail: ReLU hidden layer then a sigmoid embedding layer.
#[derive(Clone, Copy, Debug)]
pub struct SharedHead {
    pub fc1: layers::Linear,
    pub fc2: layers::Linear,
}

impl SharedHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SharedHead {
            fc1: layers::Linear::new(store, "shared.fc1", d_in, hidden, rng)?,
            fc2: layers::Linear::new(store, "shared.fc2", hidden, d_out, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.relu(h);
        let e = self.fc2.forward(tape, store, h)?;
        Ok(tape.sigmoid(e))
    }
}

/// Anything with trainable parameters and a serializable configuration.
pub trait Network {
    fn kind(&self) -> ModelKind;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn config_json(&self) -> serde_json::Value;
}

/// Models trained on the class-weighted multi-label objective.
pub trait MultiTaskNet: Network {
    fn n_tasks(&self) -> usize;

    /// `(embeddings [B × d], logits [B × n_tasks])`.
    fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &PackedBatch,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Var)>;
}

/// Common inference contract used by the probes.
pub trait JourneyEmbedder {
    fn embedding_dim(&self) -> usize;

    /// Inference-mode embeddings, one row per journey.
    fn embed_packed(&self, batch: &PackedBatch) -> Result<Vec<Vec<f64>>>;

    fn embed(&self, journeys: &[&EncodedJourney]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(journeys.len());
        for chunk in journeys.chunks(EMBED_CHUNK) {
            out.extend(self.embed_packed(&PackedBatch::pack(chunk)?)?);
        }
        Ok(out)
    }

    fn embed_one(&self, journey: &EncodedJourney) -> Result<Vec<f64>> {
        Ok(self.embed(&[journey])?.remove(0))
    }
}

pub(crate) fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = t.dims2().expect("matrix");
    (0..n).map(|i| t.data()[i * d..(i + 1) * d].to_vec()).collect()
}

/// Component-wise mean of task-specific embeddings.
pub fn st_aggregate(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| TraceError::shape("cannot aggregate zero embeddings"))?;
    let d = first.len();
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(TraceError::shape("embeddings differ in width"));
    }
    let n = embeddings.len() as f64;
    Ok((0..d)
        .map(|j| embeddings.iter().map(|e| e[j]).sum::<f64>() / n)
        .collect())
}

/// Embedding of a journey as the mean over an ensemble of embedders.
pub struct Aggregated<'a, E: JourneyEmbedder> {
    pub members: Vec<&'a E>,
}

impl<E: JourneyEmbedder> JourneyEmbedder for Aggregated<'_, E> {
    fn embedding_dim(&self) -> usize {
        self.members.first().map_or(0, |m| m.embedding_dim())
    }

    fn embed_packed(&self, batch: &PackedBatch) -> Result<Vec<Vec<f64>>> {
        let per: Vec<Vec<Vec<f64>>> = self
            .members
            .iter()
            .map(|m| m.embed_packed(batch))
            .collect::<Result<_>>()?;
        if per.is_empty() {
            return Err(TraceError::shape("cannot aggregate zero embedders"));
        }
        (0..batch.len())
            .map(|i| st_aggregate(&per.iter().map(|p| p[i].clone()).collect::<Vec<_>>()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_is_componentwise_mean() {
        let a = vec![0.2, 0.4];
        let b = vec![0.6, 0.8];
        assert_eq!(st_aggregate(&[a.clone(), a.clone()]).unwrap(), a);
        let m = st_aggregate(&[a, b]).unwrap();
        assert!((m[0] - 0.4).abs() < 1e-15 && (m[1] - 0.6).abs() < 1e-15);
        assert!(st_aggregate(&[]).is_err());
    }

    #[test]
    fn model_kind_names_round_trip() {
        for k in [ModelKind::Trace, ModelKind::SingleTask, ModelKind::Lstm, ModelKind::MiniGpt] {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
    }
}
