use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{EncoderBlock, Linear};
use super::{
    rows_of, InputConfig, InputEmbedding, JourneyEmbedder, ModelKind, MultiTaskNet, Network,
    PackedBatch, SharedHead,
};
use crate::clickstream::Task;
use crate::encoding::EncodedJourney;
use crate::error::{Result, TraceError};
use crate::tensor::{ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub input: InputConfig,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub n_encoders: usize,
    pub shared_hidden: usize,
    pub embed_dim: usize,
    /// Supervised targets, one head each. A single task gives the single-task variant.
    pub tasks: Vec<Task>,
}

impl TraceConfig {
    pub fn new(input: InputConfig) -> Self {
        TraceConfig {
            input,
            d_model: 128,
            n_heads: 8,
            ffn_dim: 128,
            dropout: 0.1,
            n_encoders: 1,
            shared_hidden: 64,
            embed_dim: 32,
            tasks: Task::TRAINING.to_vec(),
        }
    }

    pub fn single_task(input: InputConfig, task: Task) -> Self {
        TraceConfig {
            tasks: vec![task],
            ..Self::new(input)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(TraceError::config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.tasks.is_empty() {
            return Err(TraceError::config("at least one task head is required"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TraceError::config("dropout must be in [0, 1)"));
        }
        if [self.d_model, self.ffn_dim, self.shared_hidden, self.embed_dim]
            .contains(&0)
        {
            return Err(TraceError::config("layer widths must be positive"));
        }
        Ok(())
    }
}

/// Transformer journey encoder with a sigmoid-bounded embedding and affine task heads.
#[derive(Clone, Debug)]
pub struct TraceModel {
    pub cfg: TraceConfig,
    pub store: ParamStore,
    pub input: InputEmbedding,
    pub proj: Linear,
    pub blocks: Vec<EncoderBlock>,
    pub shared: SharedHead,
    pub heads: Linear,
}

impl TraceModel {
    pub fn new(cfg: TraceConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let input = InputEmbedding::new(&mut store, &cfg.input, &mut rng)?;
        let proj = Linear::new(&mut store, "proj", cfg.input.width(), cfg.d_model, &mut rng)?;
        let blocks = (0..cfg.n_encoders)
            .map(|i| {
                EncoderBlock::new(
                    &mut store,
                    &format!("enc{i}"),
                    cfg.d_model,
                    cfg.n_heads,
                    cfg.ffn_dim,
                    cfg.dropout,
                    &mut rng,
                )
            })
            .collect::<Result<_>>()?;
        let shared = SharedHead::new(&mut store, cfg.d_model, cfg.shared_hidden, cfg.embed_dim, &mut rng)?;
        let heads = Linear::new(&mut store, "heads", cfg.embed_dim, cfg.tasks.len(), &mut rng)?;
        Ok(TraceModel {
            cfg,
            store,
            input,
            proj,
            blocks,
            shared,
            heads,
        })
    }

    /// Rebuilds the architecture for `cfg` and installs `store`'s values.
    pub fn from_store(cfg: TraceConfig, store: &ParamStore) -> Result<Self> {
        let mut m = TraceModel::new(cfg, 0)?;
        m.store.copy_values_from(store)?;
        Ok(m)
    }

    pub fn is_single_task(&self) -> bool {
        self.cfg.tasks.len() == 1
    }

    /// Pooled `[B × d_model]` encoder output.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &PackedBatch,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let x = self.input.forward(tape, &self.store, batch)?;
        let mut h = self.proj.forward(tape, &self.store, x)?;
        for block in &self.blocks {
            h = block.forward(tape, &self.store, h, &batch.layout, false, training, rng)?;
        }
        tape.max_pool(h, &batch.layout)
    }

    /// Embedding and logits of a single journey.
    pub fn forward_one<R: Rng + ?Sized>(
        &self,
        enc: &EncodedJourney,
        training: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = PackedBatch::pack(&[enc])?;
        let mut tape = Tape::new();
        let (e, z) = self.forward(&mut tape, &batch, training, rng)?;
        Ok((tape.value(e).data().to_vec(), tape.value(z).data().to_vec()))
    }
}

impl Network for TraceModel {
    fn kind(&self) -> ModelKind {
        if self.is_single_task() {
            ModelKind::SingleTask
        } else {
            ModelKind::Trace
        }
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }
}

impl MultiTaskNet for TraceModel {
    fn n_tasks(&self) -> usize {
        self.cfg.tasks.len()
    }

    fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &PackedBatch,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let pooled = self.encode(tape, batch, training, rng)?;
        let e = self.shared.forward(tape, &self.store, pooled)?;
        let z = self.heads.forward(tape, &self.store, e)?;
        Ok((e, z))
    }
}

impl JourneyEmbedder for TraceModel {
    fn embedding_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn embed_packed(&self, batch: &PackedBatch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pooled = self.encode(&mut tape, batch, false, &mut rng)?;
        let e = self.shared.forward(&mut tape, &self.store, pooled)?;
        Ok(rows_of(tape.value(e)))
    }
}
