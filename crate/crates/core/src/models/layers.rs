//! Parameterized building blocks shared by the model families.

use std::rc::Rc;

use rand::Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, SegmentLayout, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Affine map `x·W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Linear {
            w: store.add(format!("{name}.w"), Tensor::glorot(fan_in, fan_out, rng))?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    /// Weights drawn from `N(0, std²)`, zero bias.
    pub fn normal<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Linear {
            w: store.add(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng))?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add(format!("{name}.g"), Tensor::full(&[dim], 1.0))?,
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, g, b, LN_EPS)
    }
}

/// Query/key/value/output projections of one attention layer.
#[derive(Clone, Copy, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SelfAttention {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng)?,
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng)?,
            heads,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        layout: &Rc<SegmentLayout>,
        causal: bool,
    ) -> Result<Var> {
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, x)?;
        let v = self.v.forward(tape, store, x)?;
        let a = tape.attention(q, k, v, Rc::clone(layout), self.heads, causal)?;
        self.o.forward(tape, store, a)
    }
}

/// Post-norm transformer block: attention and a ReLU feed-forward layer,
/// each followed by dropout, a residual connection and layer normalization.
#[derive(Clone, Copy, Debug)]
pub struct EncoderBlock {
    pub attn: SelfAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
    pub dropout: f64,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        ffn_dim: usize,
        dropout: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EncoderBlock {
            attn: SelfAttention::new(store, &format!("{name}.attn"), d_model, heads, rng)?,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), d_model, ffn_dim, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), ffn_dim, d_model, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model)?,
            dropout,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        layout: &Rc<SegmentLayout>,
        causal: bool,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let a = self.attn.forward(tape, store, x, layout, causal)?;
        let a = tape.dropout(a, self.dropout, training, rng)?;
        let r = tape.add(x, a)?;
        let x = self.ln1.forward(tape, store, r)?;

        let f = self.ff1.forward(tape, store, x)?;
        let f = tape.relu(f);
        let f = self.ff2.forward(tape, store, f)?;
        let f = tape.dropout(f, self.dropout, training, rng)?;
        let r = tape.add(x, f)?;
        self.ln2.forward(tape, store, r)
    }
}

/// Gathers rows of an embedding parameter, honoring its frozen padding row.
pub fn embed_rows(
    tape: &mut Tape,
    store: &ParamStore,
    table: ParamId,
    idx: &[Option<usize>],
) -> Result<Var> {
    let t = tape.param(store, table);
    tape.gather(t, idx, store.frozen_row(table))
}

/// Standard sine/cosine encoding of `positions` at width `dim`; position 0 maps to a zero row.
pub fn sinusoidal(positions: &[usize], dim: usize) -> Tensor {
    let mut data = vec![0.0; positions.len() * dim];
    for (r, &p) in positions.iter().enumerate() {
        if p == 0 {
            continue;
        }
        for c in 0..dim {
            let i = (c / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / dim as f64);
            data[r * dim + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(positions.len(), dim, data).expect("consistent extents")
}
