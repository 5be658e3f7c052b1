use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{embed_rows, EncoderBlock, Linear};
use super::{rows_of, JourneyEmbedder, ModelKind, Network, PackedBatch};
use crate::error::{Result, TraceError};
use crate::tensor::{ParamId, ParamStore, SegmentLayout, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GptConfig {
    /// Page vocabulary size including the padding and unknown slots.
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl GptConfig {
    pub fn new(vocab_size: usize, max_len: usize) -> Self {
        GptConfig {
            vocab_size,
            max_len,
            d_model: 64,
            n_heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
        }
    }
}

/// Single causal transformer block trained for next-page prediction on page names only.
#[derive(Clone, Debug)]
pub struct MiniGpt {
    pub cfg: GptConfig,
    pub store: ParamStore,
    pub tok: ParamId,
    pub pos: ParamId,
    pub block: EncoderBlock,
    pub out: Linear,
}

impl MiniGpt {
    pub fn new(cfg: GptConfig, seed: u64) -> Result<Self> {
        if cfg.vocab_size < 3 || cfg.max_len == 0 {
            return Err(TraceError::config("mini-gpt needs a vocabulary and max_len"));
        }
        if cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0 {
            return Err(TraceError::config(format!(
                "d_model {} is not divisible by {} heads",
                cfg.d_model, cfg.n_heads
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let tok = store.add_embedding("gpt.tok", Tensor::randn(&[cfg.vocab_size, d], 0.1, &mut rng), 0)?;
        let pos = store.add_embedding("gpt.pos", Tensor::randn(&[cfg.max_len + 1, d], 0.1, &mut rng), 0)?;
        let block = EncoderBlock::new(&mut store, "gpt.block", d, cfg.n_heads, cfg.ffn_dim, cfg.dropout, &mut rng)?;
        let out = Linear::normal(&mut store, "gpt.out", d, cfg.vocab_size, 0.02, &mut rng)?;
        Ok(MiniGpt {
            cfg,
            store,
            tok,
            pos,
            block,
            out,
        })
    }

    pub fn from_store(cfg: GptConfig, store: &ParamStore) -> Result<Self> {
        let mut m = MiniGpt::new(cfg, 0)?;
        m.store.copy_values_from(store)?;
        Ok(m)
    }

    /// Block outputs `[rows × d_model]` for packed page tokens.
    fn hidden<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        tokens: &[usize],
        layout: &Rc<SegmentLayout>,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(TraceError::shape(format!(
                "token {bad} outside vocabulary of {}",
                self.cfg.vocab_size
            )));
        }
        let mask = layout.mask();
        let mut pos = vec![Some(0); tokens.len()];
        for &(s, l) in layout.segments() {
            if l > self.cfg.max_len {
                return Err(TraceError::shape(format!(
                    "sequence of {l} exceeds max_len {}",
                    self.cfg.max_len
                )));
            }
            for r in s..s + l {
                if mask[r] {
                    pos[r] = Some(r - s + 1);
                }
            }
        }
        let idx: Vec<Option<usize>> = tokens.iter().map(|&t| Some(t)).collect();
        let te = embed_rows(tape, &self.store, self.tok, &idx)?;
        let pe = embed_rows(tape, &self.store, self.pos, &pos)?;
        let x = tape.add(te, pe)?;
        self.block.forward(tape, &self.store, x, layout, true, training, rng)
    }

    fn tokens(batch: &PackedBatch) -> Vec<usize> {
        batch.cat[0].iter().map(|t| t.unwrap_or(0)).collect()
    }

    /// Next-token logits `[rows × V]`.
    pub fn forward_packed<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &PackedBatch,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let h = self.hidden(tape, &Self::tokens(batch), &batch.layout, training, rng)?;
        let z = self.out.forward(tape, &self.store, h)?;
        Ok((h, z))
    }

    /// Logits for one token sequence with its validity mask.
    pub fn logits(&self, tokens: &[usize], mask: &[bool]) -> Result<Tensor> {
        if tokens.len() != mask.len() || !mask.iter().any(|&m| m) {
            return Err(TraceError::shape("need one mask entry per token and at least one real token"));
        }
        let layout = Rc::new(SegmentLayout::with_mask(vec![(0, tokens.len())], mask.to_vec())?);
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = self.hidden(&mut tape, tokens, &layout, false, &mut rng)?;
        let z = self.out.forward(&mut tape, &self.store, h)?;
        Ok(tape.value(z).clone())
    }

    /// Mean next-token cross-entropy over every real position that has a real successor.
    pub fn lm_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &PackedBatch,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let tokens = Self::tokens(batch);
        let (_, z) = self.forward_packed(tape, batch, training, rng)?;
        tape.softmax_xent(z, &next_token_targets(&tokens, &batch.layout))
    }
}

pub(crate) fn next_token_targets(tokens: &[usize], layout: &SegmentLayout) -> Vec<Option<usize>> {
    let mask = layout.mask();
    let mut targets = vec![None; tokens.len()];
    for &(s, l) in layout.segments() {
        for r in s..s + l - 1 {
            if mask[r] && mask[r + 1] {
                targets[r] = Some(tokens[r + 1]);
            }
        }
    }
    targets
}

impl Network for MiniGpt {
    fn kind(&self) -> ModelKind {
        ModelKind::MiniGpt
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

impl JourneyEmbedder for MiniGpt {
    fn embedding_dim(&self) -> usize {
        self.cfg.d_model
    }

    /// Mean of the block outputs over real positions.
    fn embed_packed(&self, batch: &PackedBatch) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = self.hidden(&mut tape, &Self::tokens(batch), &batch.layout, false, &mut rng)?;
        let m = tape.mean_pool(h, Rc::clone(&batch.layout))?;
        Ok(rows_of(tape.value(m)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_i_ignores_later_tokens_exactly() {
        let m = MiniGpt::new(GptConfig::new(12, 8), 4).unwrap();
        let a = m.logits(&[3, 4, 5, 6, 7], &[true; 5]).unwrap();
        let b = m.logits(&[3, 4, 5, 11, 2], &[true; 5]).unwrap();
        let v = 12;
        assert_eq!(a.data()[..3 * v], b.data()[..3 * v]);
        assert_ne!(a.data()[3 * v..], b.data()[3 * v..]);
    }

    #[test]
    fn single_token_embedding_is_its_block_output() {
        let m = MiniGpt::new(GptConfig::new(10, 4), 1).unwrap();
        let layout = Rc::new(SegmentLayout::from_lengths(&[1]).unwrap());
        let mut tape = Tape::new();
        let h = m.hidden(&mut tape, &[5], &layout, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let batch = PackedBatch {
            n_numeric: 0,
            cat: vec![vec![Some(5)], vec![Some(0)], vec![Some(0)], vec![Some(0)]],
            numeric: vec![],
            event_pos: vec![1],
            session_pos: vec![1],
            layout,
        };
        assert_eq!(m.embed_packed(&batch).unwrap()[0], tape.value(h).data());
    }

    #[test]
    fn out_of_vocab_token_rejected() {
        let m = MiniGpt::new(GptConfig::new(10, 4), 1).unwrap();
        assert!(matches!(m.logits(&[2, 10], &[true, true]), Err(TraceError::Shape(_))));
    }

    #[test]
    fn targets_stop_at_segment_and_padding() {
        let layout = SegmentLayout::with_mask(vec![(0, 3), (3, 2)], vec![true, true, false, true, true]).unwrap();
        let t = next_token_targets(&[4, 5, 0, 6, 7], &layout);
        assert_eq!(t, vec![Some(5), None, None, Some(7), None]);
    }
}
