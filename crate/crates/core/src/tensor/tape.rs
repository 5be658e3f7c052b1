//! Reverse-mode differentiation over dense tensors.
//!
//! Every primitive appends a node holding its output value and enough saved
//! state for the backward pass. [`Tape::backward`] walks the nodes once in
//! reverse creation order, so the tape itself is the topological order.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use super::dense::gemm;
use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Result, TraceError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Row ranges that form independent sequences inside a packed `[rows × d]`
/// matrix, plus a per-row validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentLayout {
    segments: Vec<(usize, usize)>,
    mask: Vec<bool>,
}

impl SegmentLayout {
    /// Segments given as `(start_row, len)`; rows are all valid.
    pub fn new(rows: usize, segments: Vec<(usize, usize)>) -> Result<Self> {
        Self::with_mask(segments, vec![true; rows])
    }

    pub fn with_mask(segments: Vec<(usize, usize)>, mask: Vec<bool>) -> Result<Self> {
        let rows = mask.len();
        let mut sorted = segments.clone();
        sorted.sort_unstable();
        let mut end = 0;
        for &(s, l) in &sorted {
            if l == 0 || s < end || s + l > rows {
                return Err(TraceError::shape(format!(
                    "segment ({s},{l}) overlaps or exceeds {rows} rows"
                )));
            }
            end = s + l;
        }
        Ok(SegmentLayout { segments, mask })
    }

    /// One segment per consecutive length.
    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut start = 0;
        let segs = lengths
            .iter()
            .map(|&l| {
                let s = (start, l);
                start += l;
                s
            })
            .collect();
        Self::new(start, segs)
    }

    pub fn segments(&self) -> &[(usize, usize)] {
        &self.segments
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn rows(&self) -> usize {
        self.mask.len()
    }
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: Var,
        factors: Vec<f64>,
    },
    Gather {
        table: Var,
        idx: Vec<Option<usize>>,
        frozen_row: Option<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: Rc<SegmentLayout>,
        heads: usize,
        scale: f64,
        /// Per segment, per head: `len × len` row-stochastic weights.
        probs: Vec<f64>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanPool {
        x: Var,
        layout: Rc<SegmentLayout>,
    },
    WeightedBce {
        logits: Var,
        labels: Vec<f64>,
        pos_weights: Vec<f64>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<Option<usize>>,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed primitives.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    /// Leaf node; differentiable iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let ng = t.requires_grad;
        self.push(t, Op::Leaf, ng)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    /// Loads a parameter; repeated loads of the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(TraceError::shape(format!(
                "matmul inner extents differ: {m}x{k} · {k2}x{n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TraceError::shape(format!(
                "{what}: operand shapes differ: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = self.value(a);
        let data = va
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::from_parts(va.shape().to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[n×d] + b[d]`, broadcasting the bias over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (_, d) = self.dims(x)?;
        if self.value(b).len() != d {
            return Err(TraceError::shape(format!(
                "bias of length {} cannot broadcast over {d} columns",
                self.value(b).len()
            )));
        }
        let bias = self.value(b).data();
        let mut t = self.value(x).clone();
        t.requires_grad = false;
        for row in t.data_mut().chunks_mut(d) {
            add_into(row, bias);
        }
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(t, Op::AddRow(x, b), ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let vx = self.value(x);
        let t = Tensor::from_parts(vx.shape().to_vec(), vx.data().iter().map(|&v| f(v)).collect());
        let ng = self.ng(x);
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(TraceError::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    /// Softmax along the last dimension. Entries where `mask` is false get
    /// weight exactly 0; each row needs at least one unmasked entry.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (_, d) = self.dims(x)?;
        let vx = self.value(x);
        if let Some(m) = mask {
            if m.len() != vx.len() && m.len() != d {
                return Err(TraceError::shape(format!(
                    "mask of length {} does not broadcast to {:?}",
                    m.len(),
                    vx.shape()
                )));
            }
        }
        let mut out = vec![0.0; vx.len()];
        for (r, (row, o)) in vx.data().chunks(d).zip(out.chunks_mut(d)).enumerate() {
            let keep = |j: usize| match mask {
                None => true,
                Some(m) if m.len() == d => m[j],
                Some(m) => m[r * d + j],
            };
            let max = (0..d)
                .filter(|&j| keep(j))
                .map(|j| row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(TraceError::Domain(format!(
                    "softmax row {r} is fully masked"
                )));
            }
            let mut z = 0.0;
            for j in 0..d {
                if keep(j) {
                    o[j] = (row[j] - max).exp();
                    z += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        let t = Tensor::from_parts(vx.shape().to_vec(), out);
        let ng = self.ng(x);
        Ok(self.push(t, Op::Softmax(x), ng))
    }

    /// Row-wise normalization to zero mean / unit variance, then `gain ⊙ · + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.dims(x)?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(TraceError::shape(format!(
                "layer_norm affine params must have length {d}"
            )));
        }
        let vx = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &vx[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        let t = Tensor::from_parts(vec![n, d], out);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Inverted dropout; identity when `training` is false or `rate` is 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TraceError::config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let factors: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let vx = self.value(x);
        let data = vx.data().iter().zip(&factors).map(|(a, f)| a * f).collect();
        let t = Tensor::from_parts(vx.shape().to_vec(), data);
        let ng = self.ng(x);
        Ok(self.push(t, Op::Dropout { x, factors }, ng))
    }

    /// Row lookup; `None` yields a zero row. Gradient never reaches `frozen_row`.
    pub fn gather(
        &mut self,
        table: Var,
        idx: &[Option<usize>],
        frozen_row: Option<usize>,
    ) -> Result<Var> {
        let (rows, d) = self.dims(table)?;
        if let Some(bad) = idx.iter().flatten().find(|&&i| i >= rows) {
            return Err(TraceError::shape(format!(
                "index {bad} out of range for table with {rows} rows"
            )));
        }
        if idx.is_empty() {
            return Err(TraceError::shape("gather with no indices"));
        }
        let src = self.value(table).data();
        let mut out = vec![0.0; idx.len() * d];
        for (o, i) in out.chunks_mut(d).zip(idx) {
            if let Some(i) = i {
                o.copy_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        let ng = self.ng(table);
        let t = Tensor::from_parts(vec![idx.len(), d], out);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                idx: idx.to_vec(),
                frozen_row,
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TraceError::shape("concat of zero tensors"));
        };
        let (n, _) = self.dims(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != n {
                return Err(TraceError::shape(format!(
                    "concat row counts differ: {n} vs {r}"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..n {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_parts(vec![n, total], out),
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.dims(x)?;
        if len == 0 || start + len > d {
            return Err(TraceError::shape(format!(
                "column slice {start}..{} outside width {d}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(vec![n, len], out),
            Op::SliceCols { x, start },
            ng,
        ))
    }

    /// Multi-head scaled dot-product attention over packed segments.
    ///
    /// `q`, `k`, `v` are `[rows × d_model]` with heads laid out as contiguous
    /// column blocks. Queries attend only to keys of their own segment whose
    /// mask is true (and, if `causal`, whose position is not after the query).
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        layout: Rc<SegmentLayout>,
        heads: usize,
        causal: bool,
    ) -> Result<Var> {
        let (rows, d) = self.dims(q)?;
        if self.dims(k)? != (rows, d) || self.dims(v)? != (rows, d) {
            return Err(TraceError::shape("q, k, v must share one shape"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TraceError::config(format!(
                "model width {d} is not divisible by {heads} heads"
            )));
        }
        if layout.rows() != rows {
            return Err(TraceError::shape(format!(
                "layout covers {} rows, tensors have {rows}",
                layout.rows()
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mask = layout.mask();
        let mut out = vec![0.0; rows * d];
        let total: usize = layout.segments().iter().map(|&(_, l)| l * l * heads).sum();
        let mut probs = vec![0.0; total];
        let mut off = 0;
        for &(s, len) in layout.segments() {
            for h in 0..heads {
                let c0 = h * dh;
                let p = &mut probs[off..off + len * len];
                for i in 0..len {
                    let qi = &qd[(s + i) * d + c0..(s + i) * d + c0 + dh];
                    let prow = &mut p[i * len..(i + 1) * len];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        if !mask[s + j] || (causal && j > i) {
                            continue;
                        }
                        let kj = &kd[(s + j) * d + c0..(s + j) * d + c0 + dh];
                        let sc = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        prow[j] = sc;
                        max = max.max(sc);
                    }
                    if max == f64::NEG_INFINITY {
                        return Err(TraceError::Domain(format!(
                            "attention row {} has no visible keys",
                            s + i
                        )));
                    }
                    let mut z = 0.0;
                    for j in 0..len {
                        if !mask[s + j] || (causal && j > i) {
                            prow[j] = 0.0;
                        } else {
                            prow[j] = (prow[j] - max).exp();
                            z += prow[j];
                        }
                    }
                    prow.iter_mut().for_each(|w| *w /= z);
                    let orow = &mut out[(s + i) * d + c0..(s + i) * d + c0 + dh];
                    for j in 0..len {
                        let w = prow[j];
                        if w != 0.0 {
                            let vj = &vd[(s + j) * d + c0..(s + j) * d + c0 + dh];
                            orow.iter_mut().zip(vj).for_each(|(o, x)| *o += w * x);
                        }
                    }
                }
                off += len * len;
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            Tensor::from_parts(vec![rows, d], out),
            Op::Attention {
                q,
                k,
                v,
                layout,
                heads,
                scale,
                probs,
            },
            ng,
        ))
    }

    /// Per-segment column max over masked-in rows; `[segments × d]`.
    /// Ties resolve to the lowest row index.
    pub fn max_pool(&mut self, x: Var, layout: &SegmentLayout) -> Result<Var> {
        let (rows, d) = self.dims(x)?;
        if layout.rows() != rows {
            return Err(TraceError::shape("layout does not match input rows"));
        }
        let src = self.value(x).data();
        let nseg = layout.segments().len();
        let mut out = vec![0.0; nseg * d];
        let mut argmax = vec![0; nseg * d];
        for (b, &(s, len)) in layout.segments().iter().enumerate() {
            let valid: Vec<usize> = (s..s + len).filter(|&r| layout.mask()[r]).collect();
            if valid.is_empty() {
                return Err(TraceError::Domain(format!(
                    "max pool over fully masked segment {b}"
                )));
            }
            for j in 0..d {
                let mut best = valid[0];
                for &r in &valid[1..] {
                    if src[r * d + j] > src[best * d + j] {
                        best = r;
                    }
                }
                out[b * d + j] = src[best * d + j];
                argmax[b * d + j] = best;
            }
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(vec![nseg, d], out),
            Op::MaxPool { x, argmax },
            ng,
        ))
    }

    /// Per-segment column mean over masked-in rows; `[segments × d]`.
    pub fn mean_pool(&mut self, x: Var, layout: Rc<SegmentLayout>) -> Result<Var> {
        let (rows, d) = self.dims(x)?;
        if layout.rows() != rows {
            return Err(TraceError::shape("layout does not match input rows"));
        }
        let src = self.value(x).data();
        let nseg = layout.segments().len();
        let mut out = vec![0.0; nseg * d];
        for (b, &(s, len)) in layout.segments().iter().enumerate() {
            let valid: Vec<usize> = (s..s + len).filter(|&r| layout.mask()[r]).collect();
            if valid.is_empty() {
                return Err(TraceError::Domain(format!(
                    "mean pool over fully masked segment {b}"
                )));
            }
            let o = &mut out[b * d..(b + 1) * d];
            for &r in &valid {
                add_into(o, &src[r * d..(r + 1) * d]);
            }
            let c = 1.0 / valid.len() as f64;
            o.iter_mut().for_each(|v| *v *= c);
        }
        let ng = self.ng(x);
        Ok(self.push(
            Tensor::from_parts(vec![nseg, d], out),
            Op::MeanPool { x, layout },
            ng,
        ))
    }

    /// Class-weighted binary cross-entropy on logits `[n × k]`: summed over
    /// the `k` columns, averaged over the `n` rows. Column `c`'s positive term
    /// is multiplied by `pos_weights[c]`.
    pub fn weighted_bce(&mut self, logits: Var, labels: &[f64], pos_weights: &[f64]) -> Result<Var> {
        let (n, k) = self.dims(logits)?;
        if labels.len() != n * k || pos_weights.len() != k {
            return Err(TraceError::shape(format!(
                "bce expects {n}x{k} labels and {k} weights"
            )));
        }
        let z = self.value(logits).data();
        let mut total = 0.0;
        for r in 0..n {
            for c in 0..k {
                total += bce_term(z[r * k + c], labels[r * k + c], pos_weights[c]);
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::WeightedBce {
                logits,
                labels: labels.to_vec(),
                pos_weights: pos_weights.to_vec(),
            },
            ng,
        ))
    }

    /// Mean softmax cross-entropy over rows that carry a target.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (n, v) = self.dims(logits)?;
        if targets.len() != n {
            return Err(TraceError::shape("one target slot per logit row required"));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(TraceError::shape(format!("target {bad} outside {v} classes")));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(TraceError::data("cross-entropy with no targets"));
        }
        let z = self.value(logits).data();
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                let row = &z[r * v..(r + 1) * v];
                total += log_sum_exp(row) - row[*t];
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(total / count as f64),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Gradient of `var` after [`Tape::backward`], if it was reached.
    pub fn grad(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradients for every parameter loaded onto this tape.
    pub fn param_grads(&self) -> Gradients {
        let mut ids: Vec<_> = self.params.iter().collect();
        ids.sort();
        let mut out = Gradients::new();
        for (&id, &v) in ids {
            if let Some(g) = self.grad(v) {
                out.accumulate(id, g);
            }
        }
        out
    }

    /// Backpropagates from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TraceError::shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].needs_grad {
                self.backprop_node(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.data();
        // accumulate `delta` into input `v` if it participates in differentiation
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a)?;
                let (_, n) = self.dims(*b)?;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| gemm(m, n, k, g, false, bv, true, ga, true));
                acc(*b, &mut |gb| gemm(k, m, n, av, true, g, false, gb, true));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(d, s)| *d -= s));
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |ga| {
                    for j in 0..ga.len() {
                        ga[j] += g[j] * bv[j];
                    }
                });
                acc(*b, &mut |gb| {
                    for j in 0..gb.len() {
                        gb[j] += g[j] * av[j];
                    }
                });
            }
            Op::AddRow(x, b) => {
                let d = self.value(*b).len();
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*b, &mut |gb| {
                    for row in g.chunks(d) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| {
                gx.iter_mut().zip(g).for_each(|(d, s)| *d += c * s)
            }),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        if xv[j] > 0.0 {
                            gx[j] += g[j];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for j in 0..gx.len() {
                    gx[j] += g[j] * out[j] * (1.0 - out[j]);
                }
            }),
            Op::Tanh(x) => acc(*x, &mut |gx| {
                for j in 0..gx.len() {
                    gx[j] += g[j] * (1.0 - out[j] * out[j]);
                }
            }),
            Op::Log(x) => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for j in 0..gx.len() {
                        gx[j] += g[j] / xv[j];
                    }
                });
            }
            Op::Softmax(x) => {
                let (_, d) = self.dims(*x)?;
                acc(*x, &mut |gx| {
                    for ((gr, yr), dst) in g.chunks(d).zip(out.chunks(d)).zip(gx.chunks_mut(d)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dst[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (_, d) = self.dims(*x)?;
                let gv = self.value(*gain).data();
                acc(*x, &mut |gx| {
                    let mut dxhat = vec![0.0; d];
                    for (r, dst) in gx.chunks_mut(d).enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gr[j] * gv[j];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / d as f64;
                        let m2 = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dst[j] += rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for gr in g.chunks(d) {
                        add_into(gb, gr);
                    }
                });
            }
            Op::Dropout { x, factors } => acc(*x, &mut |gx| {
                for j in 0..gx.len() {
                    gx[j] += g[j] * factors[j];
                }
            }),
            Op::Gather {
                table,
                idx,
                frozen_row,
            } => {
                let (_, d) = self.dims(*table)?;
                acc(*table, &mut |gt| {
                    for (r, i) in idx.iter().enumerate() {
                        match i {
                            Some(i) if Some(*i) != *frozen_row => {
                                add_into(&mut gt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d])
                            }
                            _ => {}
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut off = 0;
                for p in parts {
                    let w = self.dims(*p)?.1;
                    acc(*p, &mut |gp| {
                        for (r, dst) in gp.chunks_mut(w).enumerate() {
                            add_into(dst, &g[r * total + off..r * total + off + w]);
                        }
                    });
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (_, d) = self.dims(*x)?;
                let w = node.value.shape()[1];
                acc(*x, &mut |gx| {
                    for (r, src) in g.chunks(w).enumerate() {
                        add_into(&mut gx[r * d + start..r * d + start + w], src);
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                layout,
                heads,
                scale,
                probs,
            } => {
                let (rows, d) = self.dims(*q)?;
                let dh = d / heads;
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut dq = vec![0.0; rows * d];
                let mut dk = vec![0.0; rows * d];
                let mut dv = vec![0.0; rows * d];
                let mut off = 0;
                for &(s, len) in layout.segments() {
                    let mut ds = vec![0.0; len];
                    for h in 0..*heads {
                        let c0 = h * dh;
                        let p = &probs[off..off + len * len];
                        let at = |r: usize| (s + r) * d + c0..(s + r) * d + c0 + dh;
                        for i in 0..len {
                            let prow = &p[i * len..(i + 1) * len];
                            let go = &g[at(i)];
                            let mut dot = 0.0;
                            for j in 0..len {
                                if prow[j] == 0.0 {
                                    ds[j] = 0.0;
                                    continue;
                                }
                                let vj = &vd[at(j)];
                                let dp: f64 = go.iter().zip(vj).map(|(a, b)| a * b).sum();
                                ds[j] = dp;
                                dot += prow[j] * dp;
                                dv[at(j)].iter_mut().zip(go).for_each(|(a, b)| *a += prow[j] * b);
                            }
                            for j in 0..len {
                                if prow[j] == 0.0 {
                                    continue;
                                }
                                let w = prow[j] * (ds[j] - dot) * scale;
                                let (qi, kj) = (&qd[at(i)], &kd[at(j)]);
                                dq[at(i)].iter_mut().zip(kj).for_each(|(a, b)| *a += w * b);
                                dk[at(j)].iter_mut().zip(qi).for_each(|(a, b)| *a += w * b);
                            }
                        }
                        off += len * len;
                    }
                }
                acc(*q, &mut |gq| add_into(gq, &dq));
                acc(*k, &mut |gk| add_into(gk, &dk));
                acc(*v, &mut |gv| add_into(gv, &dv));
            }
            Op::MaxPool { x, argmax } => {
                let (_, d) = self.dims(*x)?;
                acc(*x, &mut |gx| {
                    for (o, &r) in argmax.iter().enumerate() {
                        gx[r * d + o % d] += g[o];
                    }
                });
            }
            Op::MeanPool { x, layout } => {
                let (_, d) = self.dims(*x)?;
                acc(*x, &mut |gx| {
                    for (b, &(s, len)) in layout.segments().iter().enumerate() {
                        let valid: Vec<usize> =
                            (s..s + len).filter(|&r| layout.mask()[r]).collect();
                        let c = 1.0 / valid.len() as f64;
                        for &r in &valid {
                            for j in 0..d {
                                gx[r * d + j] += c * g[b * d + j];
                            }
                        }
                    }
                });
            }
            Op::WeightedBce {
                logits,
                labels,
                pos_weights,
            } => {
                let (n, k) = self.dims(*logits)?;
                let z = self.value(*logits).data();
                let scale = g[0] / n as f64;
                acc(*logits, &mut |gz| {
                    for r in 0..n {
                        for c in 0..k {
                            let j = r * k + c;
                            gz[j] += scale * bce_grad(z[j], labels[j], pos_weights[c]);
                        }
                    }
                });
            }
            Op::SoftmaxXent { logits, targets } => {
                let (_, v) = self.dims(*logits)?;
                let z = self.value(*logits).data();
                let count = targets.iter().flatten().count() as f64;
                let scale = g[0] / count;
                acc(*logits, &mut |gz| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        let row = &z[r * v..(r + 1) * v];
                        let lse = log_sum_exp(row);
                        for c in 0..v {
                            let p = (row[c] - lse).exp();
                            gz[r * v + c] += scale * (p - if c == *t { 1.0 } else { 0.0 });
                        }
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|d| *d += g[0])),
        }
        Ok(())
    }
}

/// `−[w·y·log σ(z) + (1−y)·log(1−σ(z))]` in the overflow-free softplus form.
pub fn bce_term(z: f64, y: f64, pos_weight: f64) -> f64 {
    pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z)
}

fn bce_grad(z: f64, y: f64, pos_weight: f64) -> f64 {
    let s = sigmoid(z);
    pos_weight * y * (s - 1.0) + (1.0 - y) * s
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
