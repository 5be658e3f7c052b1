use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Linear;
use super::{
    rows_of, InputConfig, InputEmbedding, JourneyEmbedder, ModelKind, MultiTaskNet, Network,
    PackedBatch, SharedHead,
};
use crate::clickstream::Task;
use crate::error::{Result, TraceError};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub input: InputConfig,
    pub hidden: usize,
    pub dropout: f64,
    pub shared_hidden: usize,
    pub embed_dim: usize,
    pub tasks: Vec<Task>,
}

impl LstmConfig {
    pub fn new(input: InputConfig) -> Self {
        LstmConfig {
            input,
            hidden: 128,
            dropout: 0.1,
            shared_hidden: 64,
            embed_dim: 32,
            tasks: Task::TRAINING.to_vec(),
        }
    }
}

/// One recurrent layer over real events, oldest first, feeding the same
/// shared head and task heads as the transformer.
#[derive(Clone, Debug)]
pub struct LstmModel {
    pub cfg: LstmConfig,
    pub store: ParamStore,
    pub input: InputEmbedding,
    /// Input-to-gates map `[D × 4H]` with the gate bias; gate order i, f, g, o.
    pub x_gates: Linear,
    pub h_gates: ParamId,
    pub shared: SharedHead,
    pub heads: Linear,
}

impl LstmModel {
    pub fn new(cfg: LstmConfig, seed: u64) -> Result<Self> {
        if cfg.hidden == 0 || cfg.tasks.is_empty() {
            return Err(TraceError::config("lstm needs a hidden size and at least one task"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = cfg.hidden;
        let input = InputEmbedding::new(&mut store, &cfg.input, &mut rng)?;
        let x_gates = Linear::new(&mut store, "lstm.x", cfg.input.width(), 4 * h, &mut rng)?;
        let h_gates = store.add("lstm.h.w", Tensor::glorot(h, 4 * h, &mut rng))?;
        let shared = SharedHead::new(&mut store, h, cfg.shared_hidden, cfg.embed_dim, &mut rng)?;
        let heads = Linear::new(&mut store, "heads", cfg.embed_dim, cfg.tasks.len(), &mut rng)?;
        Ok(LstmModel {
            cfg,
            store,
            input,
            x_gates,
            h_gates,
            shared,
            heads,
        })
    }

    pub fn from_store(cfg: LstmConfig, store: &ParamStore) -> Result<Self> {
        let mut m = LstmModel::new(cfg, 0)?;
        m.store.copy_values_from(store)?;
        Ok(m)
    }

    /// Final hidden state of each journey, `[B × H]`.
    pub fn encode(&self, tape: &mut Tape, batch: &PackedBatch) -> Result<Var> {
        let hsz = self.cfg.hidden;
        let x = self.input.forward(tape, &self.store, batch)?;
        let xg = self.x_gates.forward(tape, &self.store, x)?;
        let wh = tape.param(&self.store, self.h_gates);
        let real = batch.real_rows();
        let b = real.len();
        let steps = real.iter().map(Vec::len).max().unwrap_or(0);
        let mut h = tape.constant(Tensor::zeros(&[b, hsz]));
        let mut c = tape.constant(Tensor::zeros(&[b, hsz]));
        for t in 0..steps {
            let idx: Vec<Option<usize>> = real.iter().map(|r| r.get(t).copied()).collect();
            let xt = tape.gather(xg, &idx, None)?;
            let hw = tape.matmul(h, wh)?;
            let gates = tape.add(xt, hw)?;
            let i = tape.slice_cols(gates, 0, hsz)?;
            let i = tape.sigmoid(i);
            let f = tape.slice_cols(gates, hsz, hsz)?;
            let f = tape.sigmoid(f);
            let g = tape.slice_cols(gates, 2 * hsz, hsz)?;
            let g = tape.tanh(g);
            let o = tape.slice_cols(gates, 3 * hsz, hsz)?;
            let o = tape.sigmoid(o);
            let fc = tape.mul(f, c)?;
            let ig = tape.mul(i, g)?;
            let c_new = tape.add(fc, ig)?;
            let tc = tape.tanh(c_new);
            let h_new = tape.mul(o, tc)?;
            if idx.iter().all(Option::is_some) {
                h = h_new;
                c = c_new;
            } else {
                // finished journeys keep their state
                let mut m = vec![0.0; b * hsz];
                for (r, ix) in idx.iter().enumerate() {
                    if ix.is_some() {
                        m[r * hsz..(r + 1) * hsz].fill(1.0);
                    }
                }
                let m = tape.constant(Tensor::matrix(b, hsz, m)?);
                h = blend(tape, m, h_new, h)?;
                c = blend(tape, m, c_new, c)?;
            }
        }
        Ok(h)
    }
}

/// `old + m ⊙ (new − old)`.
fn blend(tape: &mut Tape, m: Var, new: Var, old: Var) -> Result<Var> {
    let d = tape.sub(new, old)?;
    let md = tape.mul(m, d)?;
    tape.add(old, md)
}

impl Network for LstmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
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

impl MultiTaskNet for LstmModel {
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
        let h = self.encode(tape, batch)?;
        let h = tape.dropout(h, self.cfg.dropout, training, rng)?;
        let e = self.shared.forward(tape, &self.store, h)?;
        let z = self.heads.forward(tape, &self.store, e)?;
        Ok((e, z))
    }
}

impl JourneyEmbedder for LstmModel {
    fn embedding_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    fn embed_packed(&self, batch: &PackedBatch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let h = self.encode(&mut tape, batch)?;
        let e = self.shared.forward(&mut tape, &self.store, h)?;
        Ok(rows_of(tape.value(e)))
    }
}
